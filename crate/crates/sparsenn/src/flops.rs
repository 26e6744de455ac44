use crate::graph::ConvTrace;

/// `F = sum 2 * N_a * C_i * C_o` over the recorded convolutions.
pub fn count_flops(trace: &[ConvTrace]) -> u64 {
    trace.iter().map(|c| 2 * c.n_a as u64 * c.c_in as u64 * c.c_out as u64).sum()
}
