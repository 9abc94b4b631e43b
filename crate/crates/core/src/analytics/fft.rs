//! Multi-dimensional inverse DFT on a cubic grid, one axis at a time.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Real;

/// Unnormalized inverse DFT of `data`, laid out row-major on `m^dim` points
/// (last axis fastest).
pub fn inverse_dft_nd<T: Real>(data: &mut [Complex<T>], m: usize, dim: usize) {
    debug_assert_eq!(data.len(), m.pow(dim as u32));
    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_inverse(m);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut line = vec![Complex::new(T::zero(), T::zero()); m];
    for axis in 0..dim {
        let stride = m.pow((dim - 1 - axis) as u32);
        if stride == 1 {
            for chunk in data.chunks_exact_mut(m) {
                fft.process_with_scratch(chunk, &mut scratch);
            }
            continue;
        }
        let block = stride * m;
        for start in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }
}
