//! Annotated hex dumps of CSDM files.
//!
//! This walks the bytes using only the published layout and shares no code
//! with the reader in `scenedet-core`, so a dump that accounts for every
//! byte also checks the layout document against the real writer.

use std::fmt::Write;

const WIDTH: usize = 16;

struct Dump<'a> {
    bytes: &'a [u8],
    pos: usize,
    out: String,
}

#[derive(Debug)]
pub struct AnnotateError {
    pub offset: usize,
    pub message: String,
}

impl std::fmt::Display for AnnotateError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "offset {}: {}", self.offset, self.message)
    }
}

impl std::error::Error for AnnotateError {}

type R<T> = Result<T, AnnotateError>;

struct BlobRef {
    dtype: u8,
    dims: [u32; 4],
    len: u64,
}

impl<'a> Dump<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> R<T> {
        Err(AnnotateError { offset: self.pos, message: message.into() })
    }

    /// Emits `n` bytes, 16 per line, with `note` on the first line.
    fn field(&mut self, n: usize, note: &str) -> R<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return self.fail(format!("stream ends inside {note}"));
        }
        let start = self.pos;
        let chunk = &self.bytes[start..start + n];
        if n == 0 {
            let _ = writeln!(self.out, "{start:08x}  {:<48}  {note}", "-");
        }
        for (i, line) in chunk.chunks(WIDTH).enumerate() {
            let hex: Vec<String> = line.iter().map(|b| format!("{b:02x}")).collect();
            let text = if i == 0 { note } else { "" };
            let line = format!("{:08x}  {:<48}  {text}", start + i * WIDTH, hex.join(" "));
            let _ = writeln!(self.out, "{}", line.trim_end());
        }
        self.pos += n;
        Ok(chunk)
    }

    fn u8(&mut self, note: &str) -> R<u8> {
        let peek = *self
            .bytes
            .get(self.pos)
            .ok_or(AnnotateError { offset: self.pos, message: format!("stream ends at {note}") })?;
        self.field(1, &format!("{note} = {peek}"))?;
        Ok(peek)
    }

    fn le<const N: usize>(&mut self, note: &str) -> R<[u8; N]> {
        let start = self.pos;
        if start + N > self.bytes.len() {
            return self.fail(format!("stream ends inside {note}"));
        }
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[start..start + N]);
        let _ = note;
        Ok(a)
    }

    fn u16(&mut self, note: &str) -> R<u16> {
        let v = u16::from_le_bytes(self.le::<2>(note)?);
        self.field(2, &format!("{note} = {v}"))?;
        Ok(v)
    }

    fn u32(&mut self, note: &str) -> R<u32> {
        let v = u32::from_le_bytes(self.le::<4>(note)?);
        self.field(4, &format!("{note} = {v}"))?;
        Ok(v)
    }

    fn u64(&mut self, note: &str) -> R<u64> {
        let v = u64::from_le_bytes(self.le::<8>(note)?);
        self.field(8, &format!("{note} = {v}"))?;
        Ok(v)
    }

    fn string(&mut self, note: &str) -> R<String> {
        let n = self.u16(&format!("{note} length"))? as usize;
        let start = self.pos;
        let end = (start + n).min(self.bytes.len());
        let s = String::from_utf8_lossy(&self.bytes[start..end]).into_owned();
        self.field(n, &format!("{note} {s:?}"))?;
        Ok(s)
    }

    fn section(&mut self, title: &str) {
        let _ = writeln!(self.out, "\n# {title}");
    }

    fn quant(&mut self, note: &str) -> R<()> {
        let axis = self.bytes.get(self.pos).copied();
        let label = match axis {
            Some(0xff) => "per-tensor".to_string(),
            Some(a) => format!("per-channel along axis {a}"),
            None => return self.fail("stream ends at quant axis"),
        };
        self.field(1, &format!("{note}: axis, {label}"))?;
        let n = self.u32("  scale count")?;
        for i in 0..n {
            let v = f32::from_bits(u32::from_le_bytes(self.le::<4>("scale")?));
            self.field(4, &format!("  scale[{i}] = {v}"))?;
        }
        let zp = i32::from_le_bytes(self.le::<4>("zero point")?);
        self.field(4, &format!("  zero point = {zp}"))?;
        Ok(())
    }

    fn tensor_ref(&mut self, i: usize, refs: &mut Vec<BlobRef>) -> R<()> {
        let dtype = self.u8(&format!("tensor {i} dtype (0 f32, 1 i8, 2 i32)"))?;
        let mut dims = [0u32; 4];
        for (k, d) in dims.iter_mut().enumerate() {
            *d = self.u32(&format!("  dim {k}"))?;
        }
        self.u64("  blob offset in weight region")?;
        let len = self.u64("  blob length")?;
        if self.u8("  has quantization")? == 1 {
            self.quant("  weight quantization")?;
        }
        refs.push(BlobRef { dtype, dims, len });
        Ok(())
    }

    fn record(&mut self, i: usize, refs: &mut Vec<BlobRef>, nested: bool) -> R<()> {
        let op = self.bytes.get(self.pos).copied().unwrap_or(0);
        let name = match op {
            1 => "conv",
            2 => "depthwise_conv",
            3 => "inverted_residual",
            4 => "fully_connected",
            5 => "global_avg_pool",
            6 => "flatten",
            7 => "dropout",
            8 => "softmax",
            _ => "unknown",
        };
        let prefix = if nested { "  " } else { "" };
        if !nested {
            self.section(&format!("layer {i}: {name}"));
        }
        self.u8(&format!("{prefix}op ({name})"))?;
        self.u8(&format!("{prefix}activation (0 none, 1 relu, 2 relu6, 3 sigmoid, 4 tanh, 5 selu, 6 softmax)"))?;
        self.u8(&format!("{prefix}stride"))?;
        self.u8(&format!("{prefix}padding (0 valid, 1 same)"))?;
        let flags = self.u8(&format!("{prefix}flags (bit0 residual, bit1 expand)"))?;
        let nd = self.u8(&format!("{prefix}dim count"))?;
        for k in 0..nd {
            if op == 7 {
                let bits = u32::from_le_bytes(self.le::<4>("rate")?);
                self.field(4, &format!("{prefix}  dropout rate = {}", f32::from_bits(bits)))?;
            } else {
                self.u32(&format!("{prefix}  dim {k}"))?;
            }
        }
        let nt = self.u8(&format!("{prefix}tensor count"))?;
        for _ in 0..nt {
            let idx = refs.len();
            self.tensor_ref(idx, refs)?;
        }
        if op == 3 {
            if self.u8("residual-add quantization present")? == 1 {
                self.quant("residual-add output quantization")?;
            }
            let count = if flags & 2 != 0 { 3 } else { 2 };
            for k in 0..count {
                let _ = writeln!(self.out, "  ## sub-convolution {k}");
                self.record(i, refs, true)?;
            }
        } else {
            let nq = self.u8(&format!("{prefix}activation quantization blocks"))?;
            for k in 0..nq {
                let what = if k == 0 { "output" } else { "pre-activation" };
                self.quant(&format!("{prefix}{what} quantization"))?;
            }
        }
        Ok(())
    }
}

/// Every byte of `bytes`, grouped by section with field names and values.
pub fn annotate(bytes: &[u8]) -> Result<String, AnnotateError> {
    let mut d = Dump { bytes, pos: 0, out: String::new() };
    d.section("header");
    let magic = d.le::<4>("magic")?;
    d.field(4, &format!("magic {:?}", String::from_utf8_lossy(&magic)))?;
    d.u16("format version")?;
    d.u8("backbone (0 generic, 1 v1, 2 v2)")?;
    let quantized = d.u8("quantized")?;
    d.u16("input height")?;
    d.u16("input width")?;
    d.u16("input channels")?;
    let layers = d.u32("layer count")?;
    let label_offset = d.u64("label table offset")?;
    let weight_offset = d.u64("weight region offset")?;

    d.section("metadata");
    d.string("model name")?;
    d.u32("revision")?;
    d.u8("normalization (1 = v/127.5 - 1)")?;
    d.u32("calibration images")?;
    if d.u8("input quantization present")? == 1 {
        d.quant("input quantization")?;
    }
    let _ = quantized;

    let mut refs = Vec::new();
    for i in 0..layers as usize {
        d.record(i, &mut refs, false)?;
    }

    if d.pos as u64 != label_offset {
        return d.fail(format!("label table expected at {label_offset}"));
    }
    d.section("labels");
    let n = d.u32("label count")?;
    for i in 0..n {
        d.string(&format!("label {}", i + 1))?;
    }

    if d.pos as u64 != weight_offset {
        return d.fail(format!("weight region expected at {weight_offset}"));
    }
    d.section("weights");
    for (i, r) in refs.iter().enumerate() {
        let kind = match r.dtype {
            0 => "f32",
            1 => "i8",
            2 => "i32",
            _ => "?",
        };
        let [a, b, c, e] = r.dims;
        d.field(r.len as usize, &format!("blob {i}: {kind} {a}x{b}x{c}x{e}, {} bytes", r.len))?;
    }
    if d.pos != bytes.len() {
        return d.fail("bytes after the last blob");
    }
    let _ = writeln!(d.out, "{:08x}  end of file", d.pos);
    Ok(d.out.trim_start().to_string())
}
