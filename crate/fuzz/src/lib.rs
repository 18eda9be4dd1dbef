//! Fuzz harnesses for every input decoder. Each function must return
//! without panicking for any byte string; accepted inputs are checked to
//! survive a write/read round trip.

use arterymatch::autodiff::ModelParams;
use arterymatch::graph::VascularGraph;
use arterymatch::labeling::LabelConfig;
use arterymatch::numerics::BinaryMask;
use arterymatch::pipeline::{evaluate, Predictions};
use arterymatch::stenosis::{diameters_from_mask, stenosis_percent};
use arterymatch::synth::{generate_dataset, DatasetSpec};
use arterymatch::training::TrainConfig;

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

pub fn graph_json(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(g) = VascularGraph::from_json_str(s) {
        let again = VascularGraph::from_json_str(&g.to_json_string()).expect("re-read written graph");
        assert_eq!(g, again);
        let _ = g.bfs_order();
        let _ = g.coarse_labels();
    }
}

pub fn pgm_mask(data: &[u8]) {
    if let Ok(m) = BinaryMask::from_pgm_bytes(data) {
        let again = BinaryMask::from_pgm_bytes(&m.to_pgm_bytes()).expect("re-read written mask");
        assert_eq!(m, again);
        if m.width() * m.height() <= 4096 {
            let _ = arterymatch::numerics::euclidean_distance_transform(&m);
        }
    }
}

pub fn checkpoint_json(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(p) = ModelParams::from_checkpoint_str(s) {
        let again = ModelParams::from_checkpoint_str(&p.to_checkpoint_string()).expect("re-read checkpoint");
        assert_eq!(p, again);
    }
}

pub fn train_config(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(c) = TrainConfig::from_json_str(s) {
        let again = TrainConfig::from_json_str(&serde_json::to_string(&c).unwrap()).expect("re-read config");
        assert_eq!(c, again);
    }
}

pub fn label_config(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(c) = serde_json::from_str::<LabelConfig>(s) {
        let again: LabelConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).expect("re-read config");
        assert_eq!(c, again);
    }
}

pub fn predictions(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(p) = serde_json::from_str::<Predictions>(s) {
        if let Ok(r) = evaluate(&p, &p) {
            assert_eq!(r.accuracy, 1.0);
        }
    }
}

pub fn dataset_spec(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(spec) = serde_json::from_str::<DatasetSpec>(s) else { return };
    if spec.validate().is_err() {
        assert!(generate_dataset(&spec, 0).is_err());
        return;
    }
    // keep generation cheap
    if spec.count <= 3 && spec.tree.node_count() <= 24 && spec.tree.d_in <= 64 {
        let out = generate_dataset(&spec, 0).expect("valid spec generates");
        assert_eq!(out.len(), spec.count);
    }
}

/// Centerline points against a fixed 16x16 mask with a one-cell border.
pub fn centerline(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(points) = serde_json::from_str::<Vec<[f64; 2]>>(s) else { return };
    let cells = (0..16 * 16).map(|k| (1..15).contains(&(k % 16)) && (1..15).contains(&(k / 16))).collect();
    let mask = BinaryMask::new(16, 16, cells).unwrap();
    if let Ok(profile) = diameters_from_mask(&mask, &points) {
        let f = stenosis_percent(&profile);
        assert!(f.degenerate || (0.0..=100.0).contains(&f.percent));
    }
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    fn seeds(target: &str, f: fn(&[u8])) {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(target);
        let mut n = 0;
        for e in std::fs::read_dir(&dir).unwrap() {
            f(&std::fs::read(e.unwrap().path()).unwrap());
            n += 1;
        }
        assert!(n > 0, "no seeds in {}", dir.display());
    }

    #[test]
    fn corpus_seeds_run_clean() {
        seeds("graph_json", super::graph_json);
        seeds("pgm_mask", super::pgm_mask);
        seeds("checkpoint_json", super::checkpoint_json);
        seeds("train_config", super::train_config);
        seeds("label_config", super::label_config);
        seeds("predictions", super::predictions);
        seeds("dataset_spec", super::dataset_spec);
        seeds("centerline", super::centerline);
    }

    #[test]
    fn garbage_is_rejected_quietly() {
        for bytes in [&b""[..], b"\xff\xfe", b"{", b"null", b"P5\n99999999 99999999\n255\n", b"[[1e999, 0]]"] {
            super::graph_json(bytes);
            super::pgm_mask(bytes);
            super::checkpoint_json(bytes);
            super::train_config(bytes);
            super::label_config(bytes);
            super::predictions(bytes);
            super::dataset_spec(bytes);
            super::centerline(bytes);
        }
    }
}
