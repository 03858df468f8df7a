//! Row-parallel iteration helpers. Rows are disjoint output slices, so the
//! schedule cannot affect results; every reduction that is order-sensitive
//! stays serial at the call sites. The serial and parallel builds therefore
//! produce bitwise-identical rasters.

#[cfg(feature = "parallel")]
pub(crate) fn rows_mut<T: Send>(
    data: &mut [T],
    row_len: usize,
    f: impl Fn(usize, &mut [T]) + Send + Sync,
) {
    use rayon::prelude::*;
    data.par_chunks_mut(row_len).enumerate().for_each(|(v, row)| f(v, row));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn rows_mut<T>(data: &mut [T], row_len: usize, f: impl Fn(usize, &mut [T])) {
    for (v, row) in data.chunks_mut(row_len).enumerate() {
        f(v, row);
    }
}

/// Iterates two buffers row by row in lockstep; the buffers may have
/// different row widths (e.g. an interleaved RGB row and a scalar row).
#[cfg(feature = "parallel")]
pub(crate) fn zip_rows_mut<A: Send, B: Send>(
    a: &mut [A],
    row_len_a: usize,
    b: &mut [B],
    row_len_b: usize,
    f: impl Fn(usize, &mut [A], &mut [B]) + Send + Sync,
) {
    use rayon::prelude::*;
    a.par_chunks_mut(row_len_a)
        .zip(b.par_chunks_mut(row_len_b))
        .enumerate()
        .for_each(|(v, (ra, rb))| f(v, ra, rb));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn zip_rows_mut<A, B>(
    a: &mut [A],
    row_len_a: usize,
    b: &mut [B],
    row_len_b: usize,
    f: impl Fn(usize, &mut [A], &mut [B]),
) {
    for (v, (ra, rb)) in a.chunks_mut(row_len_a).zip(b.chunks_mut(row_len_b)).enumerate() {
        f(v, ra, rb);
    }
}
