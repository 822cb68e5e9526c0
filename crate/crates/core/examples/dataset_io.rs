// Generate the synthetic interaction world, write it in the container
// format and read it back.

use hoisynth::hoi_core::{load_dataset, save_dataset, Split};
use hoisynth::synthkit::{generate_dataset, self_check, ScenarioSpec};

pub struct DatasetIoReport {
    pub samples: usize,
    pub splits: [usize; 3],
    pub round_trip_exact: bool,
    pub max_window_distance: f64,
}

pub fn run_example() -> DatasetIoReport {
    let spec = ScenarioSpec { per_cell: 10, ..ScenarioSpec::default() };
    let (world, ds) = generate_dataset(&spec).expect("generate");
    let dir = tempfile::tempdir().expect("tempdir");
    save_dataset(&ds, dir.path()).expect("save");
    let back = load_dataset(dir.path()).expect("load");
    let check = self_check(&world, &ds).expect("self check");
    let report = DatasetIoReport {
        samples: ds.samples.len(),
        splits: Split::ALL.map(|s| ds.count(s)),
        round_trip_exact: back == ds,
        max_window_distance: check.max_window_distance,
    };
    println!("{} samples, train/val/test = {:?}", report.samples, report.splits);
    println!("first text: {}", ds.samples[0].text.raw);
    println!("container round trip exact: {}", report.round_trip_exact);
    println!("largest hand-object gap inside a contact window: {:.4} m", report.max_window_distance);
    report
}

#[allow(dead_code)]
fn main() {
    run_example();
}
