use proptest::option;
use proptest::prelude::*;
use rsem::em::NoiseKind;
use rsem_cli::config::{
    AnalysisSection, BoundsSection, GeneratorSection, ModelSection, OutputSection, RunConfig, SimulationSection, StudySection,
};

fn reals(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 0..=len)
}

fn model() -> impl Strategy<Value = ModelSection> {
    (
        option::of("[a-z_0-9]{1,12}"),
        option::of(-10.0f64..10.0),
        option::of(prop_oneof![Just(NoiseKind::Additive), Just(NoiseKind::Multiplicative)]),
        option::of(reals(4)),
        option::of((reals(4), -5.0f64..5.0, 0.0f64..5.0)),
    )
        .prop_map(|(builtin, gamma, kind, alpha, bounds)| ModelSection {
            builtin,
            gamma,
            kind,
            sigma: alpha.clone(),
            alpha,
            bounds: bounds.map(|(beta, c0, lipschitz)| BoundsSection {
                beta,
                c0,
                lipschitz,
                growth_offset: 0.0,
            }),
            ..Default::default()
        })
}

fn config() -> impl Strategy<Value = RunConfig> {
    (
        option::of(any::<u32>()),
        option::of(model()),
        option::of(prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 2)),
        option::of((option::of(reals(5)), option::of(prop::collection::vec(-5.0f64..5.0, 0..3)))),
        option::of((1e-6f64..0.99, 1u64..1_000_000, option::of(1u64..100))),
        option::of((prop::collection::vec(1e-4f64..0.99, 1..4), 1e-6f64..1e-3, option::of(10usize..5000))),
        option::of("[a-z/]{1,10}"),
    )
        .prop_map(|(seed, model, rates, analysis, sim, study, dir)| RunConfig {
            seed: seed.map(u64::from),
            model,
            generator: rates.map(|r| GeneratorSection {
                builtin: None,
                rates: Some(r),
            }),
            analysis: analysis.map(|(p_grid, cuts)| AnalysisSection {
                p_grid,
                partition_cuts: cuts,
                ..Default::default()
            }),
            simulation: sim.map(|(delta, steps, stride)| SimulationSection {
                delta,
                steps,
                x0: None,
                i0: Some(0),
                stride,
            }),
            study: study.map(|(deltas, reference_delta, n_samples)| StudySection {
                deltas,
                reference_delta,
                p: Some(1.0),
                n_samples,
                spacing: None,
                burn_in_fraction: None,
                bootstrap: None,
                floor_replicates: None,
                level: None,
                x0: None,
                i0: None,
            }),
            output: dir.map(|d| OutputSection { dir: Some(d.into()) }),
        })
}

proptest! {
    #[test]
    fn parse_serialize_parse_is_identity(cfg in config()) {
        let text = cfg.to_toml();
        let parsed = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(RunConfig::parse(&parsed.to_toml()).unwrap(), parsed);
    }
}
