use proptest::prelude::*;
use trigeval::estimators::{fit, Method};
use trigeval::io::{
    parse_fit_table, parse_observation_csv, parse_unit_csv, read_units, write_fits,
    write_observation_csv, write_unit_csv, write_units, FitRecord, Format,
};
use trigeval::model::{
    generate_population, ModelParams, NoiseScope, NoiseSpec, ObsCountLaw, TriggerLaw,
};
use trigeval::sampling::{sample_population, SamplingMode, SamplingPlan};
use trigeval::{Assignment, Dataset, GenConfig, ObservationRecord, UnitRecord};

fn gen(n_units: usize, seed: u64) -> GenConfig {
    GenConfig {
        n_units,
        params: ModelParams::new(1.0, 0.5, 0.3),
        trigger_law: TriggerLaw::Uniform { low: 0.0, high: 1.0 },
        obs_count_law: ObsCountLaw::Uniform { low: 20, high: 400 },
        obs_cap: 1_000_000,
        noise: NoiseSpec::Heterogeneous { lower: 0.5, upper: 1.5 },
        noise_scope: NoiseScope::UnitMean,
        seed,
    }
}

#[test]
fn generated_dataset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let pop = generate_population(&gen(500, 1)).unwrap();
    let plan = SamplingPlan::new(7, SamplingMode::WithoutReplacement, 2).unwrap();
    let ds = sample_population(&pop, &plan).unwrap();
    let path = dir.path().join("units.csv");
    write_unit_csv(&path, &ds).unwrap();
    assert_eq!(parse_unit_csv(&path).unwrap(), ds);

    // And without any intensity column.
    let bare = Dataset::new(
        ds.units()
            .iter()
            .cloned()
            .map(|mut u| {
                u.true_trigger_intensity = None;
                u.estimated_trigger_intensity = None;
                u
            })
            .collect(),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_units(&mut buf, &bare).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("unit_id,assignment,n_obs,mean_response\n"));
    assert_eq!(read_units(buf.as_slice()).unwrap(), bare);
}

#[test]
fn hundred_thousand_observations_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let obs: Vec<ObservationRecord> = (0..100_000u64)
        .map(|i| ObservationRecord {
            unit_id: format!("u{}", i % 997),
            response: (i as f64 * 0.618_033_988_749_894_9).sin() * 1e3 / (i as f64 + 1.0),
            trigger_status: match i % 3 {
                0 => Some(true),
                1 => Some(false),
                _ => None,
            },
        })
        .collect();
    let path = dir.path().join("obs.csv");
    write_observation_csv(&path, &obs).unwrap();
    let back = parse_observation_csv(&path).unwrap();
    assert_eq!(back.len(), obs.len());
    for (a, b) in back.iter().zip(&obs) {
        assert_eq!(a.unit_id, b.unit_id);
        assert_eq!(a.response.to_bits(), b.response.to_bits());
        assert_eq!(a.trigger_status, b.trigger_status);
    }
}

#[test]
fn fit_tables_reparse_bit_equal() {
    let dir = tempfile::tempdir().unwrap();
    let pop = generate_population(&gen(300, 9)).unwrap();
    let ds = sample_population(&pop, &SamplingPlan::new(10, SamplingMode::WithReplacement, 3).unwrap()).unwrap();
    let records: Vec<FitRecord> = Method::ALL
        .iter()
        .map(|&m| FitRecord {
            treatment_id: format!("exp,{}", m.as_str()),
            fit: fit(&ds, m, 0.95).unwrap(),
        })
        .collect();
    for (format, name) in [(Format::Csv, "fits.csv"), (Format::JsonLines, "fits.jsonl")] {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        write_fits(&mut f, &records, format).unwrap();
        drop(f);
        let back = parse_fit_table(&path).unwrap();
        assert_eq!(back, records, "{name}");
        for (a, b) in back.iter().zip(&records) {
            assert_eq!(a.fit.ate.to_bits(), b.fit.ate.to_bits());
            assert_eq!(a.fit.se_ate.to_bits(), b.fit.se_ate.to_bits());
        }
    }
}

#[test]
fn missing_files_are_io_errors() {
    let e = parse_unit_csv("/nonexistent/units.csv").unwrap_err();
    assert_eq!(e.name(), "Io");
}

fn unit_strategy() -> impl Strategy<Value = UnitRecord> {
    (
        any::<bool>(),
        1u64..1_000_000,
        -1e12f64..1e12,
        proptest::option::of(0.0f64..=1.0),
        proptest::option::of(0.0f64..=1.0),
    )
        .prop_map(|(t, n, y, r, re)| UnitRecord {
            unit_id: String::new(),
            assignment: if t { Assignment::Treatment } else { Assignment::Control },
            n_obs: n,
            mean_response: y,
            true_trigger_intensity: r,
            estimated_trigger_intensity: re,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_unit_tables_round_trip(units in proptest::collection::vec(unit_strategy(), 1..40)) {
        let units: Vec<UnitRecord> = units
            .into_iter()
            .enumerate()
            .map(|(i, mut u)| { u.unit_id = format!("id \"{i}\", x"); u })
            .collect();
        let ds = Dataset::new(units).unwrap();
        let mut buf = Vec::new();
        write_units(&mut buf, &ds).unwrap();
        prop_assert_eq!(read_units(buf.as_slice()).unwrap(), ds);
    }
}
