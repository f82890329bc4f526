use drdqn_core::nn::gradcheck::standard_cases;

#[test]
fn every_standard_case_matches_finite_differences() {
    for case in standard_cases(2024) {
        let start = std::time::Instant::now();
        let report = case.run(1e-5).unwrap();
        println!(
            "{:<28} max_rel_error {:.3e} at {} ({} entries, {:.2?})",
            case.name,
            report.max_rel_error,
            report.worst_entry,
            report.entries_checked,
            start.elapsed()
        );
        assert!(report.max_rel_error < 1e-4, "{}: {report:?}", case.name);
    }
}
