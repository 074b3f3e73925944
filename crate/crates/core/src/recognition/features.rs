use crate::log::{LogFile, LogRecord};

/// 4 histograms (three thirds of the span plus one trailing context window)
/// over the 2³ record codes.
pub const FEATURE_DIM: usize = 4 * 8;

/// Code of a record: `4·left + 2·right + moving`, moving meaning the cursor
/// differs from the previous record's.
pub fn encode_record(rec: &LogRecord, prev: &LogRecord) -> u8 {
    let moving = rec.cursor != prev.cursor;
    4 * rec.status.left_down as u8 + 2 * rec.status.right_down as u8 + moving as u8
}

/// Codes for every record of a log; record 0 is compared with itself.
pub fn encode_log(log: &LogFile) -> Vec<u8> {
    let r = &log.records;
    (0..r.len())
        .map(|i| encode_record(&r[i], &r[i.saturating_sub(1)]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Histogram block `b` (0..4).
    pub fn block(&self, b: usize) -> &[f64] {
        &self.0[b * 8..(b + 1) * 8]
    }
}

/// Features of the inclusive record span `[i, j]` plus `context_len`
/// records after `j`. See [`featurize_codes`].
pub fn featurize_interval(log: &LogFile, i: usize, j: usize, context_len: usize) -> FeatureVector {
    featurize_codes(&encode_log(log), i, j, context_len)
}

/// The span is split into three equal parts (the remainder goes to the last
/// part); spans shorter than three codes are padded by repeating the last
/// code. Each block is L1-normalized; an empty context block stays zero.
pub fn featurize_codes(codes: &[u8], i: usize, j: usize, context_len: usize) -> FeatureVector {
    assert!(i <= j && j < codes.len(), "span [{i}, {j}] outside {} codes", codes.len());
    let mut span: Vec<u8> = codes[i..=j].to_vec();
    while span.len() < 3 {
        span.push(*span.last().unwrap());
    }
    let n = span.len();
    let third = n / 3;
    let bounds = [0, third, 2 * third, n];
    let mut out = [0.0; FEATURE_DIM];
    for b in 0..3 {
        let part = &span[bounds[b]..bounds[b + 1]];
        for &c in part {
            out[b * 8 + c as usize] += 1.0;
        }
        for v in &mut out[b * 8..b * 8 + 8] {
            *v /= part.len() as f64;
        }
    }
    let ctx_end = (j + 1 + context_len).min(codes.len());
    let ctx = &codes[(j + 1).min(codes.len())..ctx_end];
    for &c in ctx {
        out[24 + c as usize] += 1.0;
    }
    if !ctx.is_empty() {
        for v in &mut out[24..] {
            *v /= ctx.len() as f64;
        }
    }
    FeatureVector(out)
}
