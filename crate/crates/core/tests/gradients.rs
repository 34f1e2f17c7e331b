//! Finite-difference checks of every differentiable building block.

#[macro_use]
mod common;
#[path = "suites/gradients.rs"]
mod suite;

suite_tests!(suite: elementwise_binary_ops, activations, smooth_l1_both_branches, matmul_and_bias, concat_gather_reshape, reductions_and_max_groups, softmax_and_cross_entropy, gru_cell_inputs_and_weights, gru_sequence_matches_cells_and_differentiates, fusion_and_scoring_heads, composite_loss_wrt_parameters);
