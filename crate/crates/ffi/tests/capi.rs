use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use flowsr::net::GeneratorSpec;
use flowsr_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn ramp(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 7 % 23) as f64 - 11.0) / 16.0).collect()
}

#[test]
fn volume_write_read_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = ramp(4 * 6 * 8 * 2 * 3);
    let file = cpath(&dir.path().join("v.f4d"));
    unsafe {
        let mut v = ptr::null_mut();
        assert_eq!(flowsr_volume_new(4, 6, 8, 2, 1.5, 40.0, data.as_ptr(), data.len(), &mut v), FlowsrStatus::Ok);
        assert!(flowsr_last_error().is_null());
        assert_eq!(flowsr_volume_write(v, file.as_ptr()), FlowsrStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(flowsr_volume_read(file.as_ptr(), &mut back), FlowsrStatus::Ok);
        let (mut nx, mut ny, mut nz, mut nt, mut sp) = (0, 0, 0, 0, 0.0);
        let s = flowsr_volume_shape(back, &mut nx, &mut ny, &mut nz, &mut nt, &mut sp, ptr::null_mut());
        assert_eq!(s, FlowsrStatus::Ok);
        assert_eq!((nx, ny, nz, nt, sp), (4, 6, 8, 2, 1.5));
        let n = flowsr_volume_len(back);
        assert_eq!(n, data.len());
        let mut small = vec![0.0; n - 1];
        assert_eq!(flowsr_volume_copy(back, small.as_mut_ptr(), small.len()), FlowsrStatus::BufferTooSmall);
        let mut buf = vec![0.0; n];
        assert_eq!(flowsr_volume_copy(back, buf.as_mut_ptr(), n), FlowsrStatus::Ok);
        // Values on a 1/16 grid are exact in single precision.
        assert_eq!(buf, data);
        flowsr_volume_free(v);
        flowsr_volume_free(back);
    }
}

#[test]
fn missing_files_report_io_errors() {
    let missing = CString::new("/nonexistent/dir/v.f4d").unwrap();
    unsafe {
        let mut v = ptr::null_mut();
        assert_eq!(flowsr_volume_read(missing.as_ptr(), &mut v), FlowsrStatus::Io);
        let msg = CStr::from_ptr(flowsr_last_error()).to_string_lossy();
        assert!(msg.contains("/nonexistent/dir/v.f4d"));
        let mut g = ptr::null_mut();
        assert_eq!(flowsr_generator_load(missing.as_ptr(), &mut g), FlowsrStatus::Io);
        assert!(g.is_null());
    }
}

#[test]
fn inference_matches_library_and_identity_path() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GeneratorSpec {
        n_rrdb: 1,
        width: 4,
        n_hr_blocks: 1,
    };
    let params = spec.init(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let ckpt = dir.path().join("g.f4dw");
    flowsr::io::save_params(&ckpt, &params).unwrap();
    let data = ramp(14 * 14 * 14 * 3);
    let lr_rust =
        flowsr::volume::VelocityVolume::from_vec(flowsr::volume::Dims::cube(14), 1, 2.0, 40.0, data.clone()).unwrap();
    let expected = flowsr::cli::infer_with(Some(&params), &lr_rust).unwrap();
    let identity = flowsr::cli::infer_with(None, &lr_rust).unwrap();
    unsafe {
        let mut lr = ptr::null_mut();
        assert_eq!(flowsr_volume_new(14, 14, 14, 1, 2.0, 40.0, data.as_ptr(), data.len(), &mut lr), FlowsrStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(flowsr_generator_load(cpath(&ckpt).as_ptr(), &mut g), FlowsrStatus::Ok);
        assert_eq!(flowsr_generator_param_count(g), spec.param_count());

        for (gen, want) in [(g as *const FlowsrGenerator, &expected), (ptr::null(), &identity)] {
            let mut sr = ptr::null_mut();
            assert_eq!(flowsr_infer(gen, lr, &mut sr), FlowsrStatus::Ok);
            let mut nx = 0;
            flowsr_volume_shape(sr, &mut nx, ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
            assert_eq!(nx, 28);
            let mut buf = vec![0.0; flowsr_volume_len(sr)];
            assert_eq!(flowsr_volume_copy(sr, buf.as_mut_ptr(), buf.len()), FlowsrStatus::Ok);
            assert_eq!(buf.as_slice(), want.data());
            flowsr_volume_free(sr);
        }
        flowsr_generator_free(g);
        flowsr_volume_free(lr);
    }
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/flowsr.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build script");
    for sym in ["flowsr_volume_read", "flowsr_infer", "flowsr_generator_load", "FLOWSR_STATUS_OK"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"flowsr.h\"\nint probe(void) { FlowsrVolume *v = 0; return flowsr_volume_read(\"x\", &v) == FLOWSR_STATUS_OK; }\n",
    )
    .unwrap();
    let status = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler available; header syntax not checked");
            return;
        }
    };
    assert!(status.success());
}
