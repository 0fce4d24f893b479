use nfisac_core::harness::{initial_placement, trial_rng};
use nfisac_core::{run_preset, ExperimentConfig, Preset, PresetOutput, ResultRow, Scheme};

fn rows(cfg: &ExperimentConfig) -> Vec<ResultRow> {
    match run_preset(cfg).unwrap() {
        PresetOutput::Results { rows, failed, .. } => {
            assert_eq!(failed, 0);
            rows
        }
        PresetOutput::Gradcheck(_) => panic!("expected result rows"),
    }
}

fn strip_wall(mut rows: Vec<ResultRow>) -> Vec<ResultRow> {
    for r in &mut rows {
        r.wall_ms = None;
    }
    rows
}

#[test]
fn rows_do_not_depend_on_thread_count() {
    let base = ExperimentConfig { preset: Preset::Gamma0, sweep: vec![0.05], trials: Some(3), seed: 77, ..Default::default() };
    let one = strip_wall(rows(&ExperimentConfig { threads: Some(1), ..base.clone() }));
    let three = strip_wall(rows(&ExperimentConfig { threads: Some(3), ..base }));
    assert_eq!(one, three);
    assert_eq!(one.len(), 4 * 3);
}

#[test]
fn fix_and_movable_schemes_share_the_start() {
    // A FIX scheme never moves antennas, so it must report the positions the
    // movable scheme started from. Compare through the shared placement draw.
    let cfg = ExperimentConfig { preset: Preset::Power, sweep: vec![1.0], trials: Some(2), seed: 5, ..Default::default() };
    let sc = nfisac_core::harness::build_scenario(&cfg, Some(1.0)).unwrap();
    for trial in 0..2 {
        let a = initial_placement(&sc, &mut trial_rng(5, trial)).unwrap();
        let b = initial_placement(&sc, &mut trial_rng(5, trial)).unwrap();
        assert_eq!(a, b);
        let ma = nfisac_core::run_trial(&sc, &a, Scheme::LpMa, &cfg.algo_params()).unwrap();
        let fix = nfisac_core::run_trial(&sc, &b, Scheme::LpFix, &cfg.algo_params()).unwrap();
        assert_eq!(fix.system.placement, a);
        assert!(ma.wsr_bits >= fix.wsr_bits - 1e-9 || ma.system.placement != a);
    }
}

#[test]
fn convergence_preset_adds_trace_rows() {
    let cfg = ExperimentConfig {
        preset: Preset::Convergence,
        schemes: vec![Scheme::ZfMa],
        sweep: vec![30.0],
        trials: Some(1),
        ..Default::default()
    };
    let rows = rows(&cfg);
    let summary: Vec<_> = rows.iter().filter(|r| r.preset == "convergence").collect();
    let trace: Vec<_> = rows.iter().filter(|r| r.preset == "convergence-trace").collect();
    assert!(rows.iter().all(|r| r.scheme == "ZF-MA"));
    assert_eq!(summary.len(), 1);
    assert!(!trace.is_empty());
    let iters: Vec<usize> = trace.iter().map(|r| r.iters.unwrap()).collect();
    assert!(iters.windows(2).all(|w| w[0] < w[1]));
    assert!(trace.windows(2).all(|w| w[1].wsr_bits.unwrap() >= w[0].wsr_bits.unwrap() - 1e-6));
}
