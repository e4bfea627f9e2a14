use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mapverify::engine::{default_linked, evaluate, EvalConfig};
use mapverify::eval_harness::{score, CategoryMapping, MapOutcome};
use mapverify::map_io::read_map;
use mapverify::scenario_gen::{build_corpus, DefectKind, Manifest};
use mapverify::synthesis::{synthesize, Registry, ReplayClient, RuleSpecRequest};

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

fn replay_session(root: &Path) -> (Vec<String>, BTreeMap<String, Vec<u8>>) {
    let dir = root.join("reg");
    let reg = Registry::init(&dir, &Default::default()).unwrap().with_clock(|| 1_760_000_000);
    let client = ReplayClient::shipped();
    let mut transcript = Vec::new();
    for (id, kind) in [
        ("slope_valid", DefectKind::ExcessiveSlope),
        ("invalid_inverted", DefectKind::ExcessiveSlope),
        ("clearance_valid", DefectKind::LowClearance),
    ] {
        let req = RuleSpecRequest::new(format!("request {id}"), Some("hint".into())).unwrap();
        let out = synthesize(&client, id, &req, kind, &dir).unwrap();
        transcript.push(out.prompt.clone());
        transcript.push(out.verdict.to_json());
        if out.verdict.is_accepted() {
            reg.approve(id, out.candidate.as_ref().unwrap(), &out.verdict).unwrap();
        } else {
            reg.reject(id).unwrap();
        }
    }
    (transcript, snapshot(&dir))
}

#[test]
fn replay_runs_are_bit_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ta, sa) = replay_session(a.path());
    let (tb, sb) = replay_session(b.path());
    assert_eq!(ta, tb, "prompts and verdicts");
    assert_eq!(sa, sb, "registry files including the journal");
    assert!(sa.contains_key("journal.log"));
}

#[test]
fn detected_counts_match_violation_lists() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    let manifest = build_corpus(7, 4, 20, &corpus).unwrap();
    let cfg = EvalConfig::default();
    let linked = default_linked(&cfg.thresholds);
    let mapping = CategoryMapping::default();
    let outcomes: Vec<MapOutcome> = manifest
        .maps
        .iter()
        .map(|m| {
            let net = read_map(&fs::read(Manifest::map_path(&corpus, &m.id)).unwrap()).unwrap();
            MapOutcome {
                id: m.id.clone(),
                report: evaluate(&linked, &net, &cfg).unwrap(),
            }
        })
        .collect();
    let metrics = score(&manifest, &outcomes, &mapping, Default::default());

    let mut pairs = 0;
    for (m, o) in manifest.maps.iter().zip(&outcomes) {
        for d in DefectKind::ALL {
            if m.has(d) && o.report.violated_rules().any(|r| r == mapping.rule(d)) {
                pairs += 1;
            }
        }
    }
    let detected: usize = metrics.categories.iter().map(|c| c.detected).sum();
    assert_eq!(detected, pairs);

    let rerun = mapverify::eval_harness::run(&corpus, &linked, &cfg, &mapping).unwrap();
    assert_eq!(rerun.to_json(), metrics.to_json());
}
