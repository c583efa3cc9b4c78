use fwspde_cli::config::{emit_config, parse_config, CommandKind, ControlSpec, ExperimentConfig};
use proptest::prelude::*;

fn decreasing(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..1.0, len).prop_map(|mut v| {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v.dedup();
        v
    })
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    (
        0usize..CommandKind::ALL.len(),
        any::<u64>(),
        0.0f64..2.0,
        1usize..200,
        (0.5f64..4.0, 1u32..400),
        decreasing(4),
        0.01f64..2.0,
        -3.0f64..3.0,
    )
        .prop_map(|(k, seed, eps, n_paths, (horizon, steps), eps_list, delta, c)| {
            let mut cfg = ExperimentConfig::example(CommandKind::ALL[k]);
            cfg.master_seed = seed;
            cfg.model.sim.eps = eps;
            cfg.model.horizon = horizon;
            cfg.model.dt = horizon / steps as f64;
            if let Some(b) = cfg.simulate.as_mut() {
                b.n_paths = n_paths;
                b.control = ControlSpec::Constant { value: vec![c] };
            }
            if let Some(b) = cfg.ldp_lower.as_mut() {
                b.eps_list = eps_list.clone();
                b.delta = delta;
                b.n_paths = n_paths;
                b.control = ControlSpec::Exponential {
                    amplitude: vec![c],
                    rate: delta,
                };
            }
            if let Some(b) = cfg.ldp_upper.as_mut() {
                b.eps_list = eps_list.clone();
                b.delta = delta;
            }
            if let Some(b) = cfg.sweep.as_mut() {
                b.eps_list = eps_list.clone();
                b.radius = delta;
            }
            if let Some(b) = cfg.exit_scaling.as_mut() {
                b.eps_list = eps_list;
                b.n_paths = n_paths;
            }
            if let Some(b) = cfg.skeleton.as_mut() {
                b.x0 = Some(vec![c]);
            }
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn load_of_emit_is_identity(cfg in config()) {
        prop_assume!(cfg.validate().is_ok());
        let text = emit_config(&cfg);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(emit_config(&back), text);
    }
}
