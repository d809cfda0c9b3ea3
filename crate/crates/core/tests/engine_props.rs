use std::cmp::Reverse;
use std::collections::BinaryHeap;

use eyesim::arch::{ArchConfig, ArchVariant, NocKind};
use eyesim::csc::{self, Signedness};
use eyesim::engine::tensors::iact_index;
use eyesim::engine::{self, choose_mapping, prefers_csc, run_layer, EnergyCostTable, LayerData, LayerTensors, SimOptions, TensorSource};
use eyesim::mapper::{self, PeTile};
use eyesim::noc::ClusterArrayConfig;
use eyesim::pe::{self, Operand};
use eyesim::workload::{load_model, LayerKind, LayerShape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn shape() -> impl Strategy<Value = LayerShape> {
    (1u64..3, 1u64..3, 1u64..24, 1u64..10, 1u64..4, 1u64..4, 1u64..3, 0u64..5, 0u64..5).prop_filter_map(
        "valid",
        |(g, n, m, c, r, s, u, eh, ew)| LayerShape::new(LayerKind::Conv, g, n, m, c, r + u * eh, s + u * ew, r, s, u).ok(),
    )
}

fn tensors(shape: &LayerShape, seed: u64, id: f64, wd: f64) -> LayerTensors {
    LayerTensors::synthetic(shape, id, wd, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Operands of one PE tile, read straight from the layer tensors.
fn tile_operands(s: &LayerShape, t: &LayerTensors, tile: &PeTile) -> (Vec<i32>, Vec<i32>) {
    let map = tile.pe_mapping(s);
    let c0 = map.c0;
    let mut x = vec![0i32; map.stream_len()];
    for (i, v) in x.iter_mut().enumerate() {
        let (p, cl) = (i / c0, i % c0);
        let h = tile.e * s.u + tile.r;
        let w = tile.f.0 * s.u + p as u64;
        *v = t.iacts[iact_index(s, tile.g, tile.n, tile.c.0 + cl as u64, h, w)] as i32;
    }
    let cols = map.cols();
    let mut w = vec![0i32; map.m0 * cols];
    for ml in 0..map.m0 {
        for j in 0..cols {
            let (q, cl) = (j / c0, j % c0);
            w[ml * cols + j] = t.weights[mapper::weight_index(s, tile.g, tile.m.0 + ml as u64, tile.c.0 + cl as u64, tile.r, q as u64)] as i32;
        }
    }
    (x, w)
}

fn small_arch() -> ArchConfig {
    let mut a = ArchConfig::v2();
    a.clusters = ClusterArrayConfig::grid(1, 1, 2, 4);
    a.noc = NocKind::Ideal;
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn functional_matches_reference(s in shape(), seed in any::<u64>(), v in 0usize..3) {
        let arch = ArchConfig::variant(ArchVariant::ALL[v]);
        let t = tensors(&s, seed, 0.5, 0.4);
        let map = choose_mapping("L", &s, &arch, LayerData::Tensors(&t), 8).unwrap();
        let opts = SimOptions { functional: true, ..Default::default() };
        let r = run_layer("L", &s, LayerData::Tensors(&t), &map, &arch, opts).unwrap();
        prop_assert!(r.psums_checked);
        prop_assert!(r.cycles >= r.bound_cycles);
        let timing = run_layer("L", &s, LayerData::Tensors(&t), &map, &arch, SimOptions::default()).unwrap();
        prop_assert_eq!(timing.cycles, r.cycles);
        prop_assert_eq!(timing.events.mac, r.events.mac);
    }

    /// Per pass, every PE runs its tile to completion; the pass ends with the last one.
    #[test]
    fn event_driven_oracle(s in shape(), seed in any::<u64>()) {
        let arch = small_arch();
        let t = tensors(&s, seed, 0.4, 0.4);
        let (ni, nw, _) = s.data_counts();
        let nzi = t.iacts.iter().filter(|&&v| v != 0).count() as u64;
        let nzw = t.weights.iter().filter(|&&v| v != 0).count() as u64;
        prop_assume!(prefers_csc(nzi, ni) && prefers_csc(nzw, nw));
        let map = choose_mapping("L", &s, &arch, LayerData::Tensors(&t), 8).unwrap();
        let mut total = 0u64;
        let mut failure = None;
        map.for_each_pass(&s, |_, tiles| {
            let mut done: BinaryHeap<Reverse<u64>> = BinaryHeap::new();
            for tile in tiles {
                let pm = tile.pe_mapping(&s);
                let (x, w) = tile_operands(&s, &t, tile);
                let xc = csc::encode_iact_stream(&x, pm.segment_len(), Signedness::Unsigned).unwrap();
                let wc = csc::encode_weight_matrix(&w, pm.m0, pm.cols()).unwrap();
                match pe::run_pe(Operand::Csc(&xc), Operand::Csc(&wc), &pm, arch.pe_mode, &arch.spad) {
                    Ok(r) => done.push(Reverse(r.work_cycles + arch.fill_cycles)),
                    Err(e) => failure = Some(e.to_string()),
                }
            }
            let mut now = 0;
            while let Some(Reverse(at)) = done.pop() {
                now = at;
            }
            total += now;
        });
        prop_assert!(failure.is_none(), "{:?}", failure);
        let r = run_layer("L", &s, LayerData::Tensors(&t), &map, &arch, SimOptions::default()).unwrap();
        prop_assert_eq!(r.compute_cycles, total);
        prop_assert_eq!(r.cycles, total);
    }

    #[test]
    fn energy_is_monotone_in_costs(field in 0usize..10, bump in 0.0f64..10.0) {
        let model = load_model(TINY).unwrap();
        let rep = engine::run_model(&model, &TensorSource::Dense, &ArchConfig::v2(), SimOptions::default()).unwrap();
        let base = EnergyCostTable::default();
        let mut more = base;
        *[
            &mut more.mac, &mut more.gated, &mut more.spad_read, &mut more.spad_write, &mut more.idle,
            &mut more.glb_read, &mut more.glb_write, &mut more.noc_hop, &mut more.dram_read, &mut more.dram_write,
        ][field] += bump;
        let a = engine::energy_report(&rep.layers, &base).total;
        let b = engine::energy_report(&rep.layers, &more).total;
        prop_assert!(b >= a);
    }
}

const TINY: &str = r#"{"name": "tiny", "layers": [
  {"label": "A", "kind": "conv", "g": 1, "n": 1, "m": 16, "c": 3, "h": 18, "w": 18, "r": 3, "s": 3, "u": 1},
  {"label": "B", "kind": "dw", "g": 16, "n": 1, "m": 1, "c": 1, "h": 8, "w": 8, "r": 3, "s": 3, "u": 1},
  {"label": "C", "kind": "fc", "g": 1, "n": 1, "m": 10, "c": 16, "h": 6, "w": 6, "r": 6, "s": 6, "u": 1}
]}"#;

#[test]
fn slowest_pe_sets_pass_time() {
    let s = LayerShape::new(LayerKind::Conv, 1, 1, 64, 1, 1, 1, 1, 1, 1).unwrap();
    let arch = small_arch();
    let map = mapper::search(&s, &arch).unwrap().0;
    assert!(map.active_pes() > 1);
    let mut t = tensors(&s, 1, 1.0, 0.0);
    let tiles = map.pe_tiles(&s);
    let heavy = &tiles[0].tiles[0];
    for m in heavy.m.0..heavy.m.1 {
        t.weights[mapper::weight_index(&s, 0, m, 0, 0, 0)] = 3;
    }
    let r = run_layer("L", &s, LayerData::Tensors(&t), &map, &arch, SimOptions::default()).unwrap();
    let heavy_work = (heavy.m.1 - heavy.m.0).div_ceil(2);
    assert_eq!(r.compute_cycles, heavy_work + arch.fill_cycles);
}

#[test]
fn sweep_matches_model_runs() {
    let model = load_model(TINY).unwrap();
    let pts = engine::scalability_sweep(&model, &[16, 64], ArchVariant::V2).unwrap();
    for p in &pts {
        let mut arch = ArchConfig::scaled(ArchVariant::V2, p.pes);
        arch.dram = eyesim::arch::DramBandwidth::UNLIMITED;
        let rep = engine::run_model(&model, &TensorSource::Dense, &arch, SimOptions::default()).unwrap();
        assert_eq!(rep.total_cycles, p.total_cycles);
    }
    assert_eq!(pts[0].normalized, 1.0);
    assert_eq!(pts[1].linear, 4.0);
}

#[test]
fn synthetic_runs_are_reproducible() {
    let model = load_model(TINY).unwrap();
    let spec = engine::SyntheticSpec::uniform(5, 0.4);
    let a = engine::run_model(&model, &TensorSource::Synthetic(spec.clone()), &ArchConfig::v2(), SimOptions::default()).unwrap();
    let b = engine::run_model(&model, &TensorSource::Synthetic(spec), &ArchConfig::v2(), SimOptions::default()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
