use std::ffi::{CStr, CString};
use std::ptr;

use fusionattn_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(fa_last_error()).to_string_lossy().into_owned() }
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn new_model(kind: &str, ms: &str) -> *mut FaModel {
    let mut m = ptr::null_mut();
    let st = fa_model_new(cstr(kind).as_ptr(), cstr(ms).as_ptr(), true, 4, 2, 3, &mut m);
    assert_eq!(st, FaStatus::FaOk, "{}", last_error());
    m
}

#[test]
fn model_lifecycle_and_prediction() {
    unsafe {
        let m = new_model("cross", "tva");
        let mut n = 0;
        assert_eq!(fa_model_attention_modules(m, &mut n), FaStatus::FaOk);
        assert_eq!(n, 6);
        let mut count = 0;
        assert_eq!(fa_model_parameter_count(m, &mut count), FaStatus::FaOk);
        assert!(count > 0);

        let mut inputs = Vec::new();
        for code in [b'a', b'v', b't'] {
            let (mut rows, mut cols) = (0, 0);
            assert_eq!(fa_model_input_shape(m, code as _, &mut rows, &mut cols), FaStatus::FaOk);
            let data: Vec<f64> = (0..rows * cols).map(|i| (i as f64 * 0.37).sin()).collect();
            let dims = [rows, cols];
            let mut t = ptr::null_mut();
            assert_eq!(fa_tensor_new(dims.as_ptr(), 2, data.as_ptr(), &mut t), FaStatus::FaOk);
            inputs.push(t as *const FaTensor);
        }
        let mut probs = [0.0; 7];
        assert_eq!(fa_model_predict(m, inputs.as_ptr(), 3, probs.as_mut_ptr(), 7), FaStatus::FaOk);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert_eq!(
            fa_model_predict(m, inputs.as_ptr(), 2, probs.as_mut_ptr(), 7),
            FaStatus::FaErrInvalid
        );
        assert!(last_error().contains("3 inputs"));

        let dir = tempfile::tempdir().unwrap();
        let d = cstr(dir.path().to_str().unwrap());
        assert_eq!(fa_model_save(m, d.as_ptr()), FaStatus::FaOk);
        let mut back = ptr::null_mut();
        assert_eq!(fa_model_load(d.as_ptr(), &mut back), FaStatus::FaOk);
        let mut again = [0.0; 7];
        assert_eq!(fa_model_predict(back, inputs.as_ptr(), 3, again.as_mut_ptr(), 7), FaStatus::FaOk);
        assert_eq!(probs, again);

        for t in inputs {
            fa_tensor_free(t as *mut _);
        }
        fa_model_free(m);
        fa_model_free(back);
    }
}

#[test]
fn config_text_round_trip() {
    unsafe {
        let m = new_model("self-nosp", "ta");
        let mut needed = 0;
        assert_eq!(fa_model_config(m, ptr::null_mut(), 0, &mut needed), FaStatus::FaErrBufferTooSmall);
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(fa_model_config(m, buf.as_mut_ptr(), needed, &mut needed), FaStatus::FaOk);
        let mut rebuilt = ptr::null_mut();
        assert_eq!(fa_model_from_config(buf.as_ptr(), 3, &mut rebuilt), FaStatus::FaOk);
        let (mut a, mut b) = (0, 0);
        fa_model_parameter_count(m, &mut a);
        fa_model_parameter_count(rebuilt, &mut b);
        assert_eq!(a, b);
        fa_model_free(m);
        fa_model_free(rebuilt);
    }
}

#[test]
fn invalid_arguments_report_errors() {
    unsafe {
        let mut m = ptr::null_mut();
        let st = fa_model_new(cstr("cross").as_ptr(), cstr("a").as_ptr(), true, 4, 2, 0, &mut m);
        assert_eq!(st, FaStatus::FaErrInvalid);
        assert!(m.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(
            fa_model_new(ptr::null(), cstr("tva").as_ptr(), true, 4, 2, 0, &mut m),
            FaStatus::FaErrNull
        );
        let mut n = 0;
        assert_eq!(fa_model_parameter_count(ptr::null(), &mut n), FaStatus::FaErrNull);
        let mut t = ptr::null_mut();
        assert_eq!(fa_tensor_read(cstr("/nonexistent/x.ftns").as_ptr(), &mut t), FaStatus::FaErrIo);
        fa_model_free(ptr::null_mut());
        fa_tensor_free(ptr::null_mut());
    }
}

#[test]
fn tensor_file_round_trip() {
    unsafe {
        let dims = [2usize, 3];
        let data = [0.5, -1.25, 3.0, 1e-3, 7.0, -0.0];
        let mut t = ptr::null_mut();
        assert_eq!(fa_tensor_new(dims.as_ptr(), 2, data.as_ptr(), &mut t), FaStatus::FaOk);
        let dir = tempfile::tempdir().unwrap();
        let path = cstr(dir.path().join("x.ftns").to_str().unwrap());
        assert_eq!(fa_tensor_write(t, path.as_ptr(), true), FaStatus::FaOk);
        let mut back = ptr::null_mut();
        assert_eq!(fa_tensor_read(path.as_ptr(), &mut back), FaStatus::FaOk);
        assert_eq!(fa_tensor_ndim(back), 2);
        assert_eq!(std::slice::from_raw_parts(fa_tensor_dims(back), 2), &dims);
        let values = std::slice::from_raw_parts(fa_tensor_data(back), fa_tensor_len(back));
        assert_eq!(values, &data);
        fa_tensor_free(t);
        fa_tensor_free(back);
    }
}

#[test]
fn statistics_entry_points() {
    unsafe {
        let counts = [81u64, 9, 5, 5];
        let (mut wa, mut uwa) = (0.0, 0.0);
        assert_eq!(fa_accuracy(counts.as_ptr(), 2, &mut wa, &mut uwa), FaStatus::FaOk);
        assert_eq!((wa, uwa), (0.86, 0.7));

        let a = [0.52, 0.55, 0.53, 0.58, 0.51];
        let (mut t, mut p) = (0.0, 0.0);
        assert_eq!(
            fa_welch_t_test(a.as_ptr(), 5, a.as_ptr(), 5, &mut t, ptr::null_mut(), &mut p),
            FaStatus::FaOk
        );
        assert_eq!(t, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        assert_eq!(
            fa_welch_t_test(a.as_ptr(), 1, a.as_ptr(), 5, &mut t, ptr::null_mut(), &mut p),
            FaStatus::FaErrInvalid
        );
    }
}
