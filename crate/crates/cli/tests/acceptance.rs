//! Runs every acceptance criterion and prints one line per criterion.

use vdmforge_cli::selftest::{run_criterion, Settings, CRITERIA};

fn main() {
    let dir = tempfile::tempdir().expect("scratch directory");
    let settings = Settings::new(dir.path());
    let mut failed = 0;
    for &(id, _) in CRITERIA.iter() {
        let result = run_criterion(id, &settings);
        println!("{result}");
        if !result.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
