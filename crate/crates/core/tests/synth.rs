use perfest_core::synth::{generate_corpus, generate_trace, CurveSpec, Population};
use perfest_core::trace_io::render_traces;
use perfest_core::{fit, CurveParams, DatasetProfile, FitConfig, ParamBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn noiseless_asymptotic_traces_fit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let profile = DatasetProfile::balanced("ten", 10);
    for i in 0..30 {
        let p = CurveParams::new(rng.random_range(40.0..90.0), rng.random_range(1.8..3.0), rng.random_range(2.0..4.0));
        let t = generate_trace("m", &CurveSpec::asymptotic(p, 0.0, i), &profile, 0.5, 20.0).unwrap();
        let points: Vec<(f64, f64)> = t.rows.iter().enumerate().map(|(k, r)| ((k + 1) as f64, r.val_acc)).collect();
        let r = fit(&points, &ParamBox::default(), &FitConfig::default()).unwrap();
        assert!(r.final_cost <= 1e-8, "curve {i} {p:?}: cost {}", r.final_cost);
    }
}

#[test]
fn same_seed_same_bytes() {
    let profile = DatasetProfile::balanced("ten", 10);
    let spec = CurveSpec::asymptotic(CurveParams::new(70.0, 2.0, 3.0), 0.3, 99);
    let a = render_traces(&[generate_trace("m", &spec, &profile, 0.5, 20.0).unwrap()]);
    let b = render_traces(&[generate_trace("m", &spec, &profile, 0.5, 20.0).unwrap()]);
    assert_eq!(a, b);
    let c1 = generate_corpus(&Population::default(), 25, &profile, 0.5, 20.0, 3).unwrap();
    let c2 = generate_corpus(&Population::default(), 25, &profile, 0.5, 20.0, 3).unwrap();
    assert_eq!(render_traces(&c1.corpus.traces), render_traces(&c2.corpus.traces));
    assert_eq!(c1.truth_csv(), c2.truth_csv());
}

#[test]
fn weights_need_not_be_normalized() {
    let profile = DatasetProfile::balanced("ten", 10);
    let pop = Population::parse(
        "groups=fast,never\nfast.kind=asymptotic\nfast.weight=3\nnever.kind=never_learn\nnever.weight=1\n",
    )
    .unwrap();
    let g = generate_corpus(&pop, 10, &profile, 0.5, 20.0, 1).unwrap();
    let never = g.specs.iter().filter(|(_, s)| s.kind == perfest_core::CurveKind::NeverLearn).count();
    // 2.5 and 7.5: tie on the fractional part goes to the earlier group
    assert_eq!(never, 2);
}
