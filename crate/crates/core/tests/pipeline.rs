use hbdelay::calendar::YearMonth;
use hbdelay::cluster::cluster_airports;
use hbdelay::diagnostics::{convergence_report, summarize};
use hbdelay::ingest::{filter_corpus, ContinuityScope, FilterConfig, ObservationRecord, VolumeThreshold};
use hbdelay::model::{build_design, DesignOptions, HierarchicalModel, Priors};
use hbdelay::report::{cluster_intercepts, compare_epochs, gamma_trajectory};
use hbdelay::sampler::{run_chains, PosteriorDraws, SamplerConfig};
use hbdelay::simulate::{simulate_dataset, ScenarioConfig};

fn row(month: u32, flights: f64) -> ObservationRecord {
    ObservationRecord {
        year: 2015,
        month,
        airport: "AAA".into(),
        carrier: "XA".into(),
        arr_flights: flights,
        arr_del15: 10.0,
        carrier_ct: 2.0,
        weather_ct: 2.0,
        nas_ct: 2.0,
        security_ct: 2.0,
        late_aircraft_ct: 2.0,
    }
}

#[test]
fn continuity_counts_only_months_that_pass_the_volume_filter() {
    // Five months on record, two of them below the threshold.
    let records = vec![row(1, 150.0), row(2, 150.0), row(3, 50.0), row(4, 150.0), row(5, 60.0)];
    let config = FilterConfig {
        threshold: VolumeThreshold::AtLeast(100),
        min_months: 4,
        epoch_end: None,
        continuity_scope: ContinuityScope::FullWindow,
    };
    assert!(filter_corpus(records.clone(), &config).unwrap().is_empty());
    let lenient = FilterConfig { min_months: 3, ..config };
    assert_eq!(filter_corpus(records, &lenient).unwrap().len(), 3);
}

#[test]
fn simulated_panel_runs_through_every_stage() {
    let scenario = ScenarioConfig {
        n_records: 600,
        months: 36,
        airports: 9,
        seed: 3,
        ..ScenarioConfig::default()
    };
    let data = simulate_dataset(&scenario).unwrap();
    let config = FilterConfig {
        threshold: VolumeThreshold::Positive,
        min_months: 12,
        epoch_end: None,
        continuity_scope: ContinuityScope::FullWindow,
    };
    let records = filter_corpus(data.records.clone(), &config).unwrap();
    assert!(!records.is_empty());

    let clustering = cluster_airports(&records, 2, 3, 1, 5).unwrap();
    let design = build_design(
        &records,
        &clustering.assignment,
        &DesignOptions {
            covid_window: scenario.covid_window().unwrap(),
            grand_means: None,
            standardize: false,
            month_span: None,
        },
    )
    .unwrap();
    assert_eq!(design.n_months, 36);

    let model = HierarchicalModel::new(design, Priors::default()).unwrap();
    let sampler = SamplerConfig {
        chains: 2,
        warmup: 150,
        draws: 100,
        seed: 4,
        ..SamplerConfig::default()
    };
    let run = run_chains(&model, &sampler).unwrap();
    let draws = PosteriorDraws::from_run(&run);
    let summaries = summarize(&draws, 0.94).unwrap();

    for s in &summaries {
        if s.name.starts_with("sigma") || s.name == "phi" {
            assert!(s.hdi_low > 0.0, "{} support", s.name);
        }
        if s.name == "shock_factor" {
            assert!(s.hdi_low >= 1.0);
        }
    }
    let report = convergence_report(&summaries, 1.01);
    assert_eq!(report.entries.len(), summaries.len());

    let epochs = compare_epochs(&summaries, &summaries).unwrap();
    assert!(epochs.iter().all(|e| e.delta == 0.0));
    let intercepts = cluster_intercepts(&summaries, &[]).unwrap();
    assert_eq!(intercepts.len(), clustering.assignment.k);
    let trajectory = gamma_trajectory(&summaries, Some(YearMonth { year: 2018, month: 1 }));
    assert_eq!(trajectory.len(), 36);
}
