use super::CorpusError;

/// Row-major matrix of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<usize>,
}

impl IdMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<usize>) -> Result<Self, CorpusError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(CorpusError::InvalidArgument(format!(
                "id matrix {rows}x{cols} cannot hold {} ids",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Packs variable-length sequences into a rectangle, filling with `pad`.
    /// Returns the matrix and the original lengths.
    pub fn from_padded(seqs: &[Vec<usize>], pad: usize) -> Result<(Self, Vec<usize>), CorpusError> {
        let cols = seqs.iter().map(Vec::len).max().unwrap_or(0);
        if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
            return Err(CorpusError::InvalidArgument("cannot pack empty sequences".into()));
        }
        let mut data = vec![pad; seqs.len() * cols];
        for (r, s) in seqs.iter().enumerate() {
            data[r * cols..r * cols + s.len()].copy_from_slice(s);
        }
        let lengths = seqs.iter().map(Vec::len).collect();
        Ok((Self::new(seqs.len(), cols, data)?, lengths))
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> usize {
        self.data[r * self.cols + c]
    }

    /// Column `c` across all rows.
    pub fn column(&self, c: usize) -> Vec<usize> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// One truncated-BPTT window: `targets[b][t]` is the stream token that follows
/// `inputs[b][t]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpttBatch {
    pub inputs: IdMatrix,
    pub targets: IdMatrix,
}

/// Cuts `ids` into `batch_size` contiguous streams (row `b` holds the `b`-th
/// slice) and walks them in windows of `bptt_len`, so the hidden state at the
/// end of one batch is the right initial state for the next. A trailing
/// window shorter than `bptt_len` is kept when it has at least 2 positions.
pub fn make_bptt_batches(ids: &[usize], batch_size: usize, bptt_len: usize) -> Result<Vec<BpttBatch>, CorpusError> {
    if batch_size == 0 || bptt_len == 0 {
        return Err(CorpusError::InvalidArgument("batch_size and bptt_len must be positive".into()));
    }
    if ids.len() <= batch_size * (bptt_len + 1) {
        return Err(CorpusError::StreamTooShort {
            len: ids.len(),
            batch_size,
            bptt_len,
        });
    }
    let n = ids.len() / batch_size;
    let columns: Vec<&[usize]> = (0..batch_size).map(|b| &ids[b * n..(b + 1) * n]).collect();
    let positions = n - 1;
    let mut out = Vec::new();
    let mut start = 0;
    while start < positions {
        let len = bptt_len.min(positions - start);
        if len < 2 && len < bptt_len {
            break;
        }
        let mut inputs = Vec::with_capacity(batch_size * len);
        let mut targets = Vec::with_capacity(batch_size * len);
        for col in &columns {
            inputs.extend_from_slice(&col[start..start + len]);
            targets.extend_from_slice(&col[start + 1..start + len + 1]);
        }
        out.push(BpttBatch {
            inputs: IdMatrix::new(batch_size, len, inputs)?,
            targets: IdMatrix::new(batch_size, len, targets)?,
        });
        start += len;
    }
    Ok(out)
}
