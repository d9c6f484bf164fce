//! Federated training of the per-pixel segmenter over oracle surrogates.
//!
//! Usage: federated_round_trip [clients] [rounds] [out_dir]

use twinmask::fedsim::{run_federation, FederationConfig};
use twinmask::toyflow::SceneSpec;
use twinmask::twinsynth::{Backend, PipelineConfig};

fn main() -> twinmask::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_clients = args.first().map_or(4, |s| s.parse().expect("clients"));
    let rounds = args.get(1).map_or(5, |s| s.parse().expect("rounds"));

    let scene = SceneSpec::default();
    let backend = Backend::Oracle(&scene);
    let config = FederationConfig {
        n_clients,
        rounds,
        ..FederationConfig::default()
    };
    let report = run_federation(&config, &PipelineConfig::default(), &backend, 11)?;

    for (id, v) in &report.round1_local_iou {
        println!("client {id}: local model after round 1, held-out IoU {v:.3}");
    }
    for r in &report.rounds {
        println!(
            "round {}: weights [{:.3}, {:.3}, {:.3}], held-out IoU {:.3}",
            r.round, r.weights[0], r.weights[1], r.weights[2], r.heldout_iou
        );
    }
    let passed = report.audit_log.iter().filter(|e| e.verdict.passed()).count();
    println!("audit: {passed}/{} messages passed", report.audit_log.len());

    if let Some(dir) = args.get(2) {
        let dir = std::path::Path::new(dir);
        std::fs::create_dir_all(dir).map_err(|e| twinmask::Error::io(dir, e))?;
        twinmask::io::write_text(&dir.join("rounds.csv"), &report.rounds_csv())?;
        twinmask::io::write_text(&dir.join("audit.jsonl"), &report.audit_jsonl())?;
    }
    Ok(())
}
