use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::op;
use super::read::{assemble, decode, describe, record_tensors, TensorRef};
use crate::model::validate;

fn dtype_name(refs: &[TensorRef], ids: &[usize]) -> &'static str {
    match ids.first().map(|&i| refs[i].code) {
        Some(super::dtype::I8) => "int8",
        Some(_) => "f32",
        None => "-",
    }
}

/// Human-readable summary of a CSDM stream: header, layer table with
/// parameter counts, quantization state and labels. Problems, including
/// validation failures, are listed in a trailing `errors` section after
/// whatever could be read.
pub fn inspect(bytes: &[u8]) -> String {
    let (decoded, result) = decode(bytes);
    let mut s = String::new();
    let mut errors: Vec<String> = Vec::new();
    if let Err(e) = &result {
        errors.push(format!("{e}"));
    }

    if let Some(h) = &decoded.header {
        let _ = writeln!(s, "format: CSDM version {}", h.version);
        let _ = writeln!(s, "backbone: {}", h.backbone.name());
        let _ = writeln!(s, "quantized: {}", if h.quantized { "yes (int8)" } else { "no (f32)" });
        let _ = writeln!(s, "input: {}x{}x{}", h.height, h.width, h.channels);
    }
    if let Some((meta, input, input_quant)) = &decoded.meta {
        let _ = writeln!(s, "name: {}", meta.name);
        let _ = writeln!(s, "revision: {}", meta.revision);
        let _ = writeln!(s, "normalization: {}", input.normalization.name());
        let _ = writeln!(s, "calibration images: {}", meta.calibration_images);
        if let Some(q) = input_quant {
            let _ = writeln!(s, "input quantization: scale {} zero-point {}", q.scale(), q.zero_point());
        }
    }

    let refs = &decoded.tensors;
    if !decoded.records.is_empty() {
        let declared = decoded.header.as_ref().map_or(0, |h| h.layer_count);
        let _ = writeln!(s, "layers: {} of {declared} read", decoded.records.len());
        let _ = writeln!(s, "{:>4}  {:<18} {:>10}  {:<5}  detail", "#", "op", "params", "dtype");
    }
    let mut total = 0u64;
    for (i, (code, pending)) in decoded.records.iter().enumerate() {
        let ids = record_tensors(pending);
        let params: u64 = ids.iter().map(|&t| refs[t].elements().unwrap_or(0)).sum();
        total = total.saturating_add(params);
        let _ = writeln!(
            s,
            "{i:>4}  {:<18} {params:>10}  {:<5}  {}",
            op::name(*code),
            dtype_name(refs, &ids),
            describe(pending, refs)
        );
    }
    let _ = writeln!(s, "total parameters: {total}");
    let _ = writeln!(s, "weight blobs: {} of {} in bounds", decoded.blobs_ok, refs.len());

    if !decoded.labels.is_empty() {
        let _ = writeln!(s, "labels ({}):", decoded.labels.len());
        for (i, l) in decoded.labels.iter().enumerate() {
            let _ = writeln!(s, "{:>4}  {l}", i + 1);
        }
    }

    if result.is_ok() {
        match assemble(bytes, decoded) {
            Ok(model) => {
                if let Err(diags) = validate(&model) {
                    errors.extend(diags.iter().map(|d| format!("validation: {d}")));
                }
            }
            Err(e) => errors.push(format!("{e}")),
        }
    }
    if errors.is_empty() {
        let _ = writeln!(s, "status: ok");
    } else {
        let _ = writeln!(s, "errors:");
        for e in errors {
            let _ = writeln!(s, "  {e}");
        }
    }
    s
}
