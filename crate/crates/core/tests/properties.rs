mod common;

use std::f64::consts::TAU;

use mapverify::engine::{default_linked, evaluate, load_linked, EvalConfig, RuleStatus};
use mapverify::map_io::{convert_roads, read_map, write_map, ElevationPoly, Geometry, GeometryKind, OpenDriveRoad};
use mapverify::map_model::{max_abs_grade, resample, xy_overlap_clearance, Lanelet, LaneletNetwork, Point3, Polyline3};
use mapverify::predicate_lang::{
    default_predicates, eval_predicate, typecheck, BuiltinCatalog, EvalError, GeomContext, Interpreter, Param,
    PdlExpr, PredicateDef, Value, ValueType, WitnessLog,
};
use mapverify::rule_lang::{parse_formula, parse_ruleset, CmpOp};
use mapverify::scenario_gen::{generate, DefectKind, ScenarioSpec, Template};
use mapverify::synthesis::{smoke_pair, validate, validate_response, RegistryState, Stage, StageStatus};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_network, random_rule};

fn polyline() -> impl Strategy<Value = Polyline3> {
    prop::collection::vec((1.0f64..20.0, -0.8f64..0.8, -3.0f64..3.0), 1..8).prop_map(|steps| {
        let mut pts = vec![Point3::new(0.0, 0.0, 0.0)];
        let mut heading: f64 = 0.0;
        for (len, turn, dz) in steps {
            heading += turn;
            let p = *pts.last().unwrap();
            pts.push(Point3::new(p.x + len * heading.cos(), p.y + len * heading.sin(), p.z + dz));
        }
        Polyline3::new(pts).unwrap()
    })
}

fn map_points(p: &Polyline3, f: impl Fn(Point3) -> Point3) -> Polyline3 {
    Polyline3::new(p.points().iter().map(|q| f(*q)).collect()).unwrap()
}

fn lanelet_from(id: u64, center: &Polyline3) -> Lanelet {
    let shift = |dy: f64| map_points(center, |q| Point3::new(q.x, q.y + dy, q.z));
    Lanelet::new(id, shift(1.75), shift(-1.75), vec![], vec![]).unwrap()
}

/// Polylines that are straight in plan view with an arbitrary z profile.
fn straight_polyline() -> impl Strategy<Value = Polyline3> {
    (0.0f64..TAU, prop::collection::vec((0.5f64..20.0, -3.0f64..3.0), 1..8)).prop_map(|(heading, steps)| {
        let mut pts = vec![Point3::new(5.0, -3.0, 1.0)];
        for (len, dz) in steps {
            let p = *pts.last().unwrap();
            pts.push(Point3::new(p.x + len * heading.cos(), p.y + len * heading.sin(), p.z + dz));
        }
        Polyline3::new(pts).unwrap()
    })
}

/// Resampling cuts corners, so a second pass over a bent polyline sees a
/// shorter path and moves its interior points.
#[test]
fn resample_of_a_bent_polyline_is_not_a_fixed_point() {
    let p = Polyline3::new(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(4.0, 0.0, 0.0), Point3::new(4.0, 3.0, 3.0)]).unwrap();
    let once = resample(&p, 3);
    assert!((once.points()[1].x - 3.5).abs() < 1e-12);
    let twice = resample(&once, 3);
    let expected = (3.5 + 0.5f64.hypot(3.0)) / 2.0;
    assert!((twice.points()[1].x - expected).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn resample_is_idempotent_on_straight_plan_views(p in straight_polyline(), n in 2usize..200) {
        let once = resample(&p, n);
        let twice = resample(&once, n);
        for (a, b) in once.points().iter().zip(twice.points()) {
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9 && (a.z - b.z).abs() < 1e-9);
        }
    }

    #[test]
    fn grade_ignores_translation_and_rotation(p in polyline(), dx in -1e3f64..1e3, dy in -1e3f64..1e3, theta in 0.0f64..TAU) {
        let g = max_abs_grade(&p);
        let moved = map_points(&p, |q| Point3::new(q.x + dx, q.y + dy, q.z));
        let (s, c) = theta.sin_cos();
        let turned = map_points(&p, |q| Point3::new(c * q.x - s * q.y, s * q.x + c * q.y, q.z));
        prop_assert!((max_abs_grade(&moved) - g).abs() < 1e-9);
        prop_assert!((max_abs_grade(&turned) - g).abs() < 1e-9);
    }

    #[test]
    fn overlap_is_symmetric(a in polyline(), b in polyline(), dx in -30.0f64..30.0, dz in -10.0f64..10.0, n in 2usize..80) {
        let la = lanelet_from(1, &a);
        let lb = lanelet_from(2, &map_points(&b, |q| Point3::new(q.x + dx, q.y - 5.0, q.z + dz)));
        let ab = xy_overlap_clearance(&la, &lb, 1.5, n);
        let ba = xy_overlap_clearance(&lb, &la, 1.5, n);
        prop_assert_eq!(ab.overlaps, ba.overlaps);
        prop_assert!(ab.min_gap == ba.min_gap || (ab.min_gap - ba.min_gap).abs() < 1e-9);
    }

    #[test]
    fn map_round_trip_is_exact(seed in any::<u64>()) {
        let net = random_network(&mut ChaCha8Rng::seed_from_u64(seed), 8);
        let back = read_map(write_map(&net).as_bytes()).unwrap();
        prop_assert_eq!(&back, &net);
        assert_links_symmetric(&back);
    }

    #[test]
    fn converted_roads_match_cubic_and_validate(
        len in 5.0f64..150.0,
        k in prop_oneof![Just(0.0), -0.03f64..-0.001, 0.001f64..0.03],
        coeffs in (-5.0f64..5.0, -0.1f64..0.1, -1e-3f64..1e-3, -1e-5f64..1e-5),
        ds in 0.3f64..7.0,
    ) {
        let (a, b, c, d) = coeffs;
        let kind = if k == 0.0 { GeometryKind::Line } else { GeometryKind::Arc { curvature: k } };
        let road = OpenDriveRoad {
            id: 3,
            length: len,
            plan_geometries: vec![Geometry { s0: 0.0, x0: 1.0, y0: -2.0, hdg: 0.4, seg_length: len, kind }],
            elevations: vec![ElevationPoly { s0: 0.0, a, b, c, d }],
            lane_width: 3.5,
            successor_road_id: None,
        };
        let net = convert_roads(&[road], ds).unwrap();
        prop_assert!(LaneletNetwork::new(net.lanelets().cloned().collect()).is_ok());
        let l = net.get(3).unwrap();
        let mut s = 0.0;
        for (i, p) in l.left_bound.points().iter().enumerate() {
            if i + 1 == l.left_bound.len() {
                s = len;
            }
            let z = a + b * s + c * s * s + d * s * s * s;
            prop_assert!((p.z - z).abs() < 1e-9, "s={} z={} want {}", s, p.z, z);
            s += ds;
        }
    }

    #[test]
    fn parser_is_total_on_noise(text in "[a-z()!&|=<>.,0-9 \\-]{0,60}") {
        let _ = parse_formula(&text);
        let _ = parse_ruleset(&text);
    }

    #[test]
    fn z_scaling_never_clears_a_slope_violation(seed in any::<u64>(), factor in 1.0f64..4.0) {
        let net = random_network(&mut ChaCha8Rng::seed_from_u64(seed), 6);
        let scaled = LaneletNetwork::new(
            net.lanelets()
                .map(|l| {
                    let s = |p: &Polyline3| map_points(p, |q| Point3::new(q.x, q.y, q.z * factor));
                    Lanelet::new(l.id, s(&l.left_bound), s(&l.right_bound), l.successors.clone(), l.predecessors.clone()).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let cfg = EvalConfig::default();
        let linked = default_linked(&cfg.thresholds);
        let before = evaluate(&linked, &net, &cfg).unwrap();
        let after = evaluate(&linked, &scaled, &cfg).unwrap();
        let ids = |r: &mapverify::engine::VerificationReport| -> Vec<Vec<u64>> {
            r.rule("slope_limit").unwrap().violations.iter().map(|v| v.binding_ids()).collect()
        };
        for v in ids(&before) {
            prop_assert!(ids(&after).contains(&v), "{:?} cleared by scaling z by {}", v, factor);
        }
    }

    #[test]
    fn pairs_domain_has_n_choose_2(seed in any::<u64>()) {
        let net = random_network(&mut ChaCha8Rng::seed_from_u64(seed), 6);
        let linked = load_linked(
            "rule p: forall (a, b) in pairs(L) . min_clearance(a, b) >= 0;\nrule s: forall x in L . forall (a, b) in succ_pairs(L) . length(x) > 0;",
            "",
        )
        .unwrap();
        let report = evaluate(&linked, &net, &EvalConfig::default()).unwrap();
        let n = net.len();
        prop_assert_eq!(&report.rule("p").unwrap().domain_sizes, &vec![n * (n - 1) / 2]);
        prop_assert_eq!(report.rule("p").unwrap().bindings_checked, n * (n - 1) / 2);
        let succ: usize = net.lanelets().map(|l| l.successors.len()).sum();
        prop_assert_eq!(&report.rule("s").unwrap().domain_sizes, &vec![n, succ]);
    }

    #[test]
    fn forall_and_negated_exists_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(&mut rng, 5);
        let rule = random_rule(&mut rng, "r", 4);
        let body = mapverify::rule_lang::print_formula(&rule.body);
        let text = format!("rule a: {body};\nrule b: !!({body});\nrule c: !(!({body}));");
        let linked = load_linked(&text, mapverify::predicate_lang::DEFAULT_PREDICATES).unwrap();
        let r = evaluate(&linked, &net, &EvalConfig::default()).unwrap();
        let sat = |n: &str| r.rule(n).unwrap().status == RuleStatus::Satisfied;
        prop_assert_eq!(sat("a"), sat("b"));
        prop_assert_eq!(sat("b"), sat("c"));
    }

    #[test]
    fn typechecked_predicates_never_raise_type_errors(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let registered = default_predicates();
        let def = random_def(&mut rng);
        if typecheck(std::slice::from_ref(&def), &BuiltinCatalog::standard(), registered.defs()).is_err() {
            return Ok(());
        }

        let net = random_network(&mut rng, 4);
        let ids: Vec<u64> = net.ids().collect();
        let geom = GeomContext::new(&net, 64, 1.5);
        let interp = Interpreter::new(&registered, &geom);
        for _ in 0..4 {
            let args: Vec<Value> = def
                .params
                .iter()
                .map(|p| match p.ty {
                    ValueType::Lanelet => Value::Lanelet(*ids.choose(&mut rng).unwrap()),
                    ValueType::Number => Value::Number(rng.gen_range(-5.0..5.0)),
                    ValueType::Bool => Value::Bool(rng.gen()),
                })
                .collect();
            let first = eval_predicate(&def, &args, &interp, &mut WitnessLog::default());
            prop_assert!(!matches!(first, Err(EvalError::Type(_))), "{:?} on {:?}: {:?}", def, args, first);
            let again = eval_predicate(&def, &args, &interp, &mut WitnessLog::default());
            prop_assert_eq!(first, again);
        }
    }

    #[test]
    fn generated_scenarios_keep_their_contract(seed in any::<u64>(), pick in 0usize..8) {
        let cfg = EvalConfig::default();
        let linked = default_linked(&cfg.thresholds);
        let (template, defects) = [
            (Template::Chain { segments: 1 }, vec![]),
            (Template::Chain { segments: 5 }, vec![DefectKind::AbruptStep]),
            (Template::Chain { segments: 3 }, vec![DefectKind::ExcessiveSlope, DefectKind::AbruptStep]),
            (Template::Ramp, vec![]),
            (Template::Ramp, vec![DefectKind::ExcessiveSlope]),
            (Template::Ramp, vec![DefectKind::AbruptStep]),
            (Template::BridgeOverRoad, vec![]),
            (Template::BridgeOverRoad, vec![DefectKind::LowClearance]),
        ][pick].clone();
        let spec = ScenarioSpec::new(seed, template, defects.clone()).unwrap();
        let (net, truth) = generate(&spec, "m").unwrap();
        assert_links_symmetric(&net);
        let report = evaluate(&linked, &net, &cfg).unwrap();
        if defects.is_empty() {
            prop_assert!(report.is_satisfied(), "clean {:?} flagged: {:?}", template, report.violated_rules().collect::<Vec<_>>());
        }
        let rule_for = |d: DefectKind| match d {
            DefectKind::ExcessiveSlope => "slope_limit",
            DefectKind::AbruptStep => "elevation_continuity",
            DefectKind::LowClearance => "vertical_clearance",
        };
        for d in &defects {
            prop_assert!(truth.has(*d));
            prop_assert!(report.violated_rules().any(|r| r == rule_for(*d)), "{:?} missed on {:?}", d, template);
        }
        if let Some(g) = truth.magnitudes.grade {
            prop_assert!((0.20..=0.35).contains(&g));
        }
        if let Some(c) = truth.magnitudes.clearance {
            prop_assert!((2.0..=3.5).contains(&c));
        }
    }

    #[test]
    fn validator_is_monotone_under_registry_growth(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fixtures = [
            ("slope_valid", DefectKind::ExcessiveSlope),
            ("step_valid", DefectKind::AbruptStep),
            ("clearance_valid", DefectKind::LowClearance),
        ];
        let (id, kind) = fixtures[rng.gen_range(0..3)];
        let text = fixture(id);
        let base = default_state();
        let (cand, verdict) = validate_response(text, &base, &smoke_pair(kind));
        prop_assert!(verdict.is_accepted());
        let cand = cand.unwrap();

        let mut rules = base_rules();
        let mut pdl = mapverify::predicate_lang::DEFAULT_PREDICATES.to_string();
        for (other, _) in fixtures.iter().filter(|(o, _)| *o != id) {
            if rng.gen_bool(0.5) {
                let (c, _) = validate_response(fixture(other), &base, &smoke_pair(DefectKind::ExcessiveSlope));
                let c = c.unwrap();
                rules.push_str(&c.rule_text);
                rules.push('\n');
                pdl.push_str(&c.pdl_text);
                pdl.push('\n');
            }
        }
        for k in 0..rng.gen_range(0..3) {
            rules.push_str(&mapverify::rule_lang::print_rule(&random_rule(&mut rng, &format!("extra_{k}"), 3)));
            rules.push('\n');
        }
        let grown = RegistryState::from_texts(&rules, &pdl).unwrap();
        prop_assert!(validate(&cand, &grown, &smoke_pair(kind)).is_accepted());

        let clashing = RegistryState::from_texts(&format!("{rules}{}\n", cand.rule_text), &format!("{pdl}{}\n", cand.pdl_text)).unwrap();
        let v = validate(&cand, &clashing, &smoke_pair(kind));
        prop_assert_eq!(v.rejected_at(), Some(Stage::Typecheck));
        let statuses: Vec<StageStatus> = v.stages.iter().map(|s| s.status).collect();
        prop_assert_eq!(statuses, vec![
            StageStatus::Passed, StageStatus::Passed, StageStatus::Passed,
            StageStatus::Failed, StageStatus::Skipped, StageStatus::Skipped,
        ]);
    }
}

#[test]
fn predicate_generator_mostly_typechecks() {
    let registered = default_predicates();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let accepted = (0..400)
        .filter(|_| typecheck(&[random_def(&mut rng)], &BuiltinCatalog::standard(), registered.defs()).is_ok())
        .count();
    assert!(accepted >= 200, "only {accepted} of 400 generated defs typecheck");
}

fn fixture(id: &str) -> &'static str {
    mapverify::synthesis::client::SHIPPED_FIXTURES.iter().find(|(n, _)| *n == id).unwrap().1
}

fn base_rules() -> String {
    mapverify::engine::default_ruleset_text(&Default::default())
}

fn default_state() -> RegistryState {
    RegistryState::from_texts(&base_rules(), mapverify::predicate_lang::DEFAULT_PREDICATES).unwrap()
}

fn assert_links_symmetric(net: &LaneletNetwork) {
    for l in net.lanelets() {
        for s in &l.successors {
            assert!(net.get(*s).unwrap().predecessors.contains(&l.id));
        }
        for p in &l.predecessors {
            assert!(net.get(*p).unwrap().successors.contains(&l.id));
        }
    }
}

const CALLABLE: &[&str] = &[
    "grade_max", "elev_step", "min_clearance", "length", "start_z", "end_z", "overlaps_xy", "is_successor",
    "is_grade_within_limit", "elevation_step_ok", "clearance_ok",
];

fn random_expr<R: Rng>(rng: &mut R, params: &[Param], depth: usize) -> PdlExpr {
    let leaf = depth == 0 || rng.gen_bool(0.3);
    if leaf {
        return match rng.gen_range(0..3) {
            0 if !params.is_empty() => PdlExpr::Param(params.choose(rng).unwrap().name.clone()),
            1 => {
                let n = rng.gen_range(0..4);
                PdlExpr::Call(CALLABLE.choose(rng).unwrap().to_string(), (0..n).map(|_| random_expr(rng, params, 0)).collect())
            }
            _ => PdlExpr::Num(rng.gen_range(0..50) as f64 / 10.0),
        };
    }
    let sub = |rng: &mut R| Box::new(random_expr(rng, params, depth - 1));
    match rng.gen_range(0..5) {
        0 => PdlExpr::And(sub(rng), sub(rng)),
        1 => PdlExpr::Or(sub(rng), sub(rng)),
        2 => PdlExpr::Not(sub(rng)),
        3 => PdlExpr::Cmp(*CmpOp::ALL.choose(rng).unwrap(), sub(rng), sub(rng)),
        _ => {
            let n = rng.gen_range(1..4);
            PdlExpr::Call(CALLABLE.choose(rng).unwrap().to_string(), (0..n).map(|_| random_expr(rng, params, depth - 1)).collect())
        }
    }
}

fn typed_call<R: Rng>(rng: &mut R, params: &[Param], want: ValueType, depth: usize) -> PdlExpr {
    let lanelet = |rng: &mut R| {
        let ls: Vec<&Param> = params.iter().filter(|p| p.ty == ValueType::Lanelet).collect();
        PdlExpr::Param(ls.choose(rng).unwrap().name.clone())
    };
    let has_lanelet = params.iter().any(|p| p.ty == ValueType::Lanelet);
    if !has_lanelet {
        return random_typed(rng, params, want, 0);
    }
    let num = |rng: &mut R| random_typed(rng, params, ValueType::Number, depth.saturating_sub(1));
    match want {
        ValueType::Number => {
            let name = ["grade_max", "elev_step", "min_clearance", "length", "start_z", "end_z"].choose(rng).unwrap();
            let arity = if ["elev_step", "min_clearance"].contains(name) { 2 } else { 1 };
            PdlExpr::Call(name.to_string(), (0..arity).map(|_| lanelet(rng)).collect())
        }
        _ => match rng.gen_range(0..5) {
            0 => PdlExpr::Call("overlaps_xy".into(), vec![lanelet(rng), lanelet(rng)]),
            1 => PdlExpr::Call("is_successor".into(), vec![lanelet(rng), lanelet(rng)]),
            2 => PdlExpr::Call("is_grade_within_limit".into(), vec![lanelet(rng), num(rng)]),
            3 => PdlExpr::Call("elevation_step_ok".into(), vec![lanelet(rng), lanelet(rng), num(rng)]),
            _ => PdlExpr::Call("clearance_ok".into(), vec![lanelet(rng), lanelet(rng), num(rng), num(rng)]),
        },
    }
}

/// Expression of type `want` over `params`.
fn random_typed<R: Rng>(rng: &mut R, params: &[Param], want: ValueType, depth: usize) -> PdlExpr {
    let of_type: Vec<&Param> = params.iter().filter(|p| p.ty == want).collect();
    if depth == 0 || rng.gen_bool(0.25) {
        return match want {
            _ if !of_type.is_empty() && rng.gen_bool(0.5) => PdlExpr::Param(of_type.choose(rng).unwrap().name.clone()),
            ValueType::Number => PdlExpr::Num(rng.gen_range(0..50) as f64 / 10.0),
            ValueType::Bool => {
                let n = |rng: &mut R| PdlExpr::Num(rng.gen_range(0..50) as f64 / 10.0);
                PdlExpr::Cmp(*CmpOp::ALL.choose(rng).unwrap(), Box::new(n(rng)), Box::new(n(rng)))
            }
            ValueType::Lanelet => typed_call(rng, params, ValueType::Number, 0),
        };
    }
    match want {
        ValueType::Number | ValueType::Lanelet => typed_call(rng, params, ValueType::Number, depth),
        ValueType::Bool => {
            let b = |rng: &mut R| Box::new(random_typed(rng, params, ValueType::Bool, depth - 1));
            match rng.gen_range(0..5) {
                0 => PdlExpr::And(b(rng), b(rng)),
                1 => PdlExpr::Or(b(rng), b(rng)),
                2 => PdlExpr::Not(b(rng)),
                3 => {
                    let n = |rng: &mut R| Box::new(random_typed(rng, params, ValueType::Number, depth - 1));
                    PdlExpr::Cmp(*CmpOp::ALL.choose(rng).unwrap(), n(rng), n(rng))
                }
                _ => typed_call(rng, params, ValueType::Bool, depth),
            }
        }
    }
}

/// Random predicate definition: type-directed most of the time, arbitrary
/// (and usually ill-typed) otherwise.
fn random_def<R: Rng>(rng: &mut R) -> PredicateDef {
    if rng.gen_bool(0.7) {
        let mut params: Vec<Param> = (0..rng.gen_range(1..4))
            .map(|i| Param {
                name: format!("p{i}"),
                ty: [ValueType::Lanelet, ValueType::Number, ValueType::Bool][rng.gen_range(0..3)],
            })
            .collect();
        params[0].ty = ValueType::Lanelet;
        params.shuffle(rng);
        let body = random_typed(rng, &params, ValueType::Bool, 4);
        return PredicateDef {
            name: "candidate".into(),
            params,
            body,
        };
    }
    let params: Vec<Param> = (0..rng.gen_range(0..4))
        .map(|i| Param {
            name: format!("p{i}"),
            ty: [ValueType::Lanelet, ValueType::Number, ValueType::Bool][rng.gen_range(0..3)],
        })
        .collect();
    let body = random_expr(rng, &params, 4);
    PredicateDef {
        name: "candidate".into(),
        params,
        body,
    }
}
