use proptest::prelude::*;

use rpm_bayes::data::{builtin, builtin_printed, BUILTIN};
use rpm_bayes::io::{
    parse_model, parse_model_file, parse_scan_file, write_atomic, write_model_file,
    write_scan_file,
};
use rpm_bayes::simulation::{default_portal_profile, RngStream, ScanMatrix, ScanSampler};
use rpm_bayes::spectra::MixtureSpec;
use rpm_bayes::Error;

#[test]
fn shipped_table_is_a_seven_class_model() {
    for file in [builtin(), builtin_printed()] {
        let model = file.model().unwrap();
        assert_eq!(model.len(), 7);
        assert_eq!(model.windows(), 3);
        let heu = &model.classes()[model.index_of("HEU").unwrap()];
        for (p, want) in heu.spectrum.probs().iter().zip([0.954, 0.033, 0.013]) {
            assert!((p - want).abs() <= 0.001, "{p} vs {want}");
        }
        let dangerous: Vec<_> = model.classes().iter().filter(|c| c.dangerous).map(|c| c.label.as_str()).collect();
        assert_eq!(dangerous, ["HEU", "WGPu"]);
    }
}

#[test]
fn consistent_table_rounds_to_reference_spectra() {
    let reference = [
        ("HEU", [0.954, 0.033, 0.013]),
        ("Tile", [0.658, 0.242, 0.100]),
        ("Kitty litter", [0.631, 0.292, 0.077]),
        ("Salt", [0.662, 0.273, 0.065]),
        ("Background", [0.651, 0.249, 0.100]),
    ];
    let file = builtin();
    for (label, want) in reference {
        let p = file.material(label).unwrap().spectrum();
        for (got, w) in p.probs().iter().zip(want) {
            assert!((got - w).abs() <= 0.0005 + 1e-12, "{label}: {got} vs {w}");
        }
    }
}

#[test]
fn model_file_round_trips() {
    let file = builtin();
    let again = parse_model_file(&write_model_file(&file)).unwrap();
    assert_eq!(again, file);
    assert_eq!(parse_model(BUILTIN).unwrap(), file.model().unwrap());
}

#[test]
fn empty_model_reports_no_material_rows() {
    match parse_model_file("") {
        Err(Error::Parse(p)) => assert!(p.reason.contains("no material rows"), "{}", p.reason),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn duplicate_label_names_label_and_lines() {
    let text = "[materials]\nA, dangerous, 1, 2\nB, nondangerous, 2, 1\nA, nondangerous, 3, 3\n";
    match parse_model_file(text) {
        Err(Error::Parse(p)) => {
            assert_eq!(p.line, 4);
            assert!(p.reason.contains("'A'"), "{}", p.reason);
            assert!(p.reason.contains('2') && p.reason.contains('4'), "{}", p.reason);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_priors_are_rejected() {
    let text = "[materials]\nA, dangerous, 1, 2\nB, nondangerous, 2, 1\n[priors]\nA, 0.5\nB, 0.6\n";
    assert!(matches!(parse_model_file(text), Err(Error::Parse(_))));
    let zero = "[materials]\nA, dangerous, 0, 0\nB, nondangerous, 2, 1\n";
    assert!(matches!(parse_model_file(zero), Err(Error::Parse(_))));
}

#[test]
fn simulated_fixture_has_portal_dimensions() {
    let sampler = ScanSampler::new(
        &MixtureSpec::pure(rpm_bayes::data::material("Salt"), 1.0).unwrap(),
        &default_portal_profile(),
    )
    .unwrap();
    let text = write_scan_file(&sampler.sample_stream(RngStream::new(5, 0)));
    let scan = parse_scan_file(&text).unwrap();
    assert_eq!(scan.windows(), 3);
    assert_eq!(scan.steps(), 20);
    assert_eq!(scan.metadata.seed, Some(5));
}

#[test]
fn negative_count_is_a_located_error() {
    match parse_scan_file("w1,w2\n1,2\n4,-5\n") {
        Err(Error::Parse(p)) => {
            assert_eq!(p.line, 3);
            assert!(p.column > 1);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn atomic_write_leaves_no_temporary_files() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("out.txt");
    write_atomic(&target, b"first").unwrap();
    write_atomic(&target, b"second").unwrap();
    assert_eq!(std::fs::read(&target).unwrap(), b"second");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let missing = dir.path().join("no/such/dir/out.txt");
    assert!(write_atomic(&missing, b"x").is_err());
    assert!(!missing.exists());
}

fn scan_strategy() -> impl Strategy<Value = ScanMatrix> {
    (1usize..5, 1usize..8).prop_flat_map(|(b, t)| {
        prop::collection::vec(prop::collection::vec(any::<u64>(), t), b).prop_map(move |rows| {
            let labels = (0..b).map(|i| format!("win {i}")).collect();
            ScanMatrix::from_window_rows(labels, rows).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn scan_write_parse_identity(scan in scan_strategy(), seed in any::<Option<u64>>(), source in "[ -~]{0,20}") {
        let mut scan = scan;
        scan.metadata.seed = seed;
        scan.metadata.source = if source.is_empty() { None } else { Some(source) };
        let back = parse_scan_file(&write_scan_file(&scan)).unwrap();
        prop_assert_eq!(back, scan);
    }
}
