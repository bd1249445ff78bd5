// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ffi::{CStr, CString};
use std::ptr;

use aape_core::toy::{generate_planted_dataset, PlantSpec};
use aape_ffi::*;

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = aape_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn planted(dir: &std::path::Path) -> aape_core::toy::PlantMap {
    let spec = PlantSpec {
        num_classes: 4,
        planted_per_class: 2,
        p_on: 1.0,
        p_off: 0.0,
        background_p: 0.5,
        num_layers: 2,
        neurons_per_layer: 32,
        samples_per_class: 50,
        seed: 11,
    };
    generate_planted_dataset(&spec, dir).unwrap()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(aape_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn full_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let plants = planted(dir.path());
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(aape_dataset_open(cpath(dir.path()).as_ptr(), &mut ds), AapeStatus::Ok);
        let (mut l, mut n, mut c, mut s) = (0, 0, 0, 0);
        assert_eq!(aape_dataset_shape(ds, &mut l, &mut n, &mut c, &mut s), AapeStatus::Ok);
        assert_eq!((l, n, c, s), (2, 32, 4, 200));

        let mut probs = ptr::null_mut();
        assert_eq!(aape_probs_compute(ds, &mut probs), AapeStatus::Ok);
        let first = plants.planted[0][0];
        let mut p = -1.0;
        let id = AapeNeuronId { layer: first.layer, neuron: first.neuron };
        assert_eq!(aape_probs_get(probs, id, 0, &mut p), AapeStatus::Ok);
        assert_eq!(p, 1.0);

        let mut scores = vec![0.0; 64];
        assert_eq!(aape_probs_scores(probs, scores.as_mut_ptr(), 64), AapeStatus::Ok);
        assert_eq!(aape_probs_scores(probs, scores.as_mut_ptr(), 63), AapeStatus::BufferTooSmall);

        let bin = dir.path().join("p.bin");
        assert_eq!(aape_probs_write(probs, cpath(&bin).as_ptr()), AapeStatus::Ok);
        let mut probs2 = ptr::null_mut();
        assert_eq!(aape_probs_read(cpath(&bin).as_ptr(), &mut probs2), AapeStatus::Ok);

        let mut cfg = aape_selection_config_default();
        cfg.r_aape = 2.0;
        let mut sel = ptr::null_mut();
        assert_eq!(aape_selection_run(probs2, ds, &cfg, &mut sel), AapeStatus::Ok);
        let mut k = 0;
        assert_eq!(aape_selection_num_classes(sel, &mut k), AapeStatus::Ok);
        assert_eq!(k, 4);

        for (class, truth) in plants.planted.iter().enumerate() {
            let mut len = 0;
            // probing with zero capacity reports the size
            assert_eq!(
                aape_selection_class_neurons(sel, class, ptr::null_mut(), 0, &mut len),
                AapeStatus::BufferTooSmall
            );
            let mut buf = vec![AapeNeuronId { layer: 0, neuron: 0 }; len];
            assert_eq!(aape_selection_class_neurons(sel, class, buf.as_mut_ptr(), len, &mut len), AapeStatus::Ok);
            let got: Vec<_> = buf.iter().map(|i| (i.layer, i.neuron)).collect();
            let want: Vec<_> = truth.iter().map(|i| (i.layer, i.neuron)).collect();
            assert_eq!(got, want);
        }

        let mut j = -1.0;
        assert_eq!(aape_selection_jaccard(sel, 0, sel, 0, &mut j), AapeStatus::Ok);
        assert_eq!(j, 1.0);
        assert_eq!(aape_selection_jaccard(sel, 0, sel, 1, &mut j), AapeStatus::Ok);
        assert_eq!(j, 0.0);

        let name = CString::new("class_02").unwrap();
        let names = [name.as_ptr()];
        let mut tm = ptr::null_mut();
        assert_eq!(aape_mask_targeted(sel, names.as_ptr(), 1, AapeCombine::Union, &mut tm), AapeStatus::Ok);
        let mut tlen = 0;
        assert_eq!(aape_mask_len(tm, &mut tlen), AapeStatus::Ok);
        assert_eq!(tlen, 2);

        let mut rm = ptr::null_mut();
        assert_eq!(aape_mask_random(2, 32, 5, 42, tm, &mut rm), AapeStatus::Ok);
        let mut ids = vec![AapeNeuronId { layer: 0, neuron: 0 }; 5];
        let mut rlen = 0;
        assert_eq!(aape_mask_neurons(rm, ids.as_mut_ptr(), 5, &mut rlen), AapeStatus::Ok);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        for id in &ids {
            assert!(!plants.planted[2].contains(&aape_core::store::NeuronId::new(id.layer, id.neuron)));
        }

        let mpath = dir.path().join("m.json");
        assert_eq!(aape_mask_write_json(rm, cpath(&mpath).as_ptr()), AapeStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(aape_mask_read_json(cpath(&mpath).as_ptr(), &mut back), AapeStatus::Ok);
        let mut ids2 = vec![AapeNeuronId { layer: 0, neuron: 0 }; 5];
        assert_eq!(aape_mask_neurons(back, ids2.as_mut_ptr(), 5, &mut rlen), AapeStatus::Ok);
        assert_eq!(ids, ids2);

        let spath = dir.path().join("sel.json");
        assert_eq!(aape_selection_write_json(sel, cpath(&spath).as_ptr()), AapeStatus::Ok);
        let mut sel2 = ptr::null_mut();
        assert_eq!(aape_selection_read(cpath(&spath).as_ptr(), &mut sel2), AapeStatus::Ok);

        aape_mask_free(back);
        aape_mask_free(rm);
        aape_mask_free(tm);
        aape_selection_free(sel2);
        aape_selection_free(sel);
        aape_probs_free(probs2);
        aape_probs_free(probs);
        aape_dataset_free(ds);
    }
}

#[test]
fn random_masks_match_the_core_generator() {
    let core = aape_core::ablation::random_mask(
        aape_core::store::Geometry::new(3, 10),
        7,
        99,
        &Default::default(),
    )
    .unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(aape_mask_random(3, 10, 7, 99, ptr::null(), &mut m), AapeStatus::Ok);
        let mut ids = vec![AapeNeuronId { layer: 0, neuron: 0 }; 7];
        let mut len = 0;
        assert_eq!(aape_mask_neurons(m, ids.as_mut_ptr(), 7, &mut len), AapeStatus::Ok);
        let got: Vec<_> = ids.iter().map(|i| (i.layer, i.neuron)).collect();
        let want: Vec<_> = core.neurons().iter().map(|i| (i.layer, i.neuron)).collect();
        assert_eq!(got, want);
        aape_mask_free(m);

        assert_eq!(aape_mask_random(1, 4, 5, 0, ptr::null(), &mut m), AapeStatus::MaskTooLarge);
        assert!(last_error().contains('5'));
    }
}

#[test]
fn apply_layer_zeroes_only_masked_columns() {
    let ids = [AapeNeuronId { layer: 1, neuron: 2 }, AapeNeuronId { layer: 0, neuron: 0 }];
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(aape_mask_from_ids(2, 3, ids.as_ptr(), 2, &mut m), AapeStatus::Ok);
        let mut block = vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(aape_mask_apply_layer(m, 1, block.as_mut_ptr(), 2, 3), AapeStatus::Ok);
        assert_eq!(block, vec![1.0, 2.0, 0.0, 4.0, 5.0, 0.0]);
        assert_eq!(aape_mask_apply_layer(m, 0, block.as_mut_ptr(), 2, 3), AapeStatus::Ok);
        assert_eq!(block, vec![0.0, 2.0, 0.0, 0.0, 5.0, 0.0]);
        assert_eq!(aape_mask_apply_layer(m, 2, block.as_mut_ptr(), 2, 3), AapeStatus::Geometry);
        aape_mask_free(m);

        let bad = [AapeNeuronId { layer: 0, neuron: 9 }];
        assert_eq!(aape_mask_from_ids(2, 3, bad.as_ptr(), 1, &mut m), AapeStatus::Geometry);
    }
}

#[test]
fn entropy_and_jaccard_on_raw_arrays() {
    unsafe {
        let mut h = 0.0;
        let p = [0.5, 0.5];
        assert_eq!(aape_entropy(p.as_ptr(), 2, &mut h), AapeStatus::Ok);
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(aape_entropy(ptr::null(), 0, &mut h), AapeStatus::Ok);
        assert_eq!(h, f64::INFINITY);
        let bad = [1.5];
        assert_eq!(aape_entropy(bad.as_ptr(), 1, &mut h), AapeStatus::InvalidArgument);

        let a = [AapeNeuronId { layer: 0, neuron: 1 }, AapeNeuronId { layer: 0, neuron: 2 }];
        let b = [AapeNeuronId { layer: 0, neuron: 2 }];
        let mut j = 0.0;
        assert_eq!(aape_jaccard(a.as_ptr(), 2, b.as_ptr(), 1, &mut j), AapeStatus::Ok);
        assert_eq!(j, 0.5);
        assert_eq!(aape_jaccard(ptr::null(), 0, ptr::null(), 0, &mut j), AapeStatus::Ok);
        assert_eq!(j, 0.0);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(aape_dataset_open(ptr::null(), &mut ds), AapeStatus::NullPointer);
        assert!(last_error().contains("path"));
        assert!(ds.is_null());

        let missing = CString::new("/definitely/not/here").unwrap();
        assert_eq!(aape_dataset_open(missing.as_ptr(), &mut ds), AapeStatus::Io);
        assert!(ds.is_null());

        let mut n = 0;
        assert_eq!(aape_mask_len(ptr::null(), &mut n), AapeStatus::NullPointer);

        // freeing null is a no-op
        aape_dataset_free(ptr::null_mut());
        aape_probs_free(ptr::null_mut());
        aape_selection_free(ptr::null_mut());
        aape_mask_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/aape.h")).unwrap();
    for sym in [
        "aape_version",
        "aape_last_error_message",
        "aape_dataset_open",
        "aape_selection_run",
        "aape_mask_random",
        "aape_mask_free",
        "AAPE_STATUS_OK",
        "typedef struct AapeMask AapeMask",
    ] {
        assert!(header.contains(sym), "{sym}");
    }
}

#[test]
fn header_compiles_as_c99_when_a_compiler_exists() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/aape.h");
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-fsyntax-only", "-x", "c", header])
        .status();
    match status {
        Ok(s) => assert!(s.success(), "cc rejected aape.h"),
        Err(_) => eprintln!("no C compiler found; header syntax not checked"),
    }
}
