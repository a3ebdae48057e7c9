use std::fs::File;
use std::io::{BufReader, BufWriter};

use qpm_core::bellstats::{
    chsh, chsh_closed_form, count_coincidences, read_time_tags, simulate_time_tags, write_time_tags, ChshAngles, DetectorModel, SourceModel,
};
use qpm_core::device;
use qpm_core::phasematch::{find_operating_point, idler_wavelength, FreeParameter};

#[test]
fn calibrated_device_phase_matches_both_processes_at_the_design_point() {
    let model = device::calibrated_model().unwrap();
    let spec = device::interlaced_spec();
    let op = find_operating_point(&model, spec.period1_um, spec.period2_um, FreeParameter::Temperature { pump_um: 0.78 }).unwrap();
    assert!((op.temperature_c - 156.4).abs() < 0.05, "{}", op.temperature_c);
    assert!((op.signal_um - 1.5500522).abs() < 1e-5, "{}", op.signal_um);
    assert!((op.idler_um - idler_wavelength(0.78, op.signal_um).unwrap()).abs() < 1e-12);
    assert_ne!(op.processes[0].signal_pol, op.processes[1].signal_pol);
}

#[test]
fn time_tag_files_round_trip_into_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    let source = SourceModel {
        pair_rate_per_s: 2e5,
        visibility: 0.95,
        phase_rad: 0.0,
    };
    let detectors = DetectorModel::uniform(0.1, 500.0, 2.0);
    let angles = ChshAngles::standard();
    let duration = 0.2;
    let mut records = Vec::new();
    for (k, setting) in angles.analyzer_settings(0.0).unwrap().iter().enumerate() {
        let tags = simulate_time_tags(&source, &detectors, setting, duration, 40 + k as u64).unwrap();
        let path = dir.path().join(format!("s{k}.qpmtt"));
        write_time_tags(&tags, BufWriter::new(File::create(&path).unwrap())).unwrap();
        let back = read_time_tags(BufReader::new(File::open(&path).unwrap())).unwrap();
        assert_eq!(back, tags);
        records.push(count_coincidences(&back, *setting, duration, detectors.window_ns).unwrap());
    }
    let r = chsh(&records, &angles, 0.0).unwrap();
    let expected = chsh_closed_form(source.visibility, 0.0, &angles).unwrap();
    assert!((r.s - expected).abs() < 4.0 * r.sigma_s, "S = {} ± {}, expected {expected}", r.s, r.sigma_s);
    assert!(r.significance() > 3.0);
}
