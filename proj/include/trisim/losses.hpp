// SPDX-License-Identifier: Apache-2.0
//
// Triplet cosine-similarity losses. Encoder outputs entering a loss term as
// the matching target are passed through stop_gradient, so only the predictor
// side of each term backpropagates into the encoder.
#pragma once

#include "trisim/tensor.hpp"

namespace trisim {

template <typename S>
struct TripletBatchT {
  TensorT<S> y1, y2, y3;  // encoder outputs per view
  TensorT<S> z1, z2, z3;  // predictor outputs per view
};

using TripletBatch = TripletBatchT<float>;

namespace detail {

template <typename S>
void check_rows(const TensorT<S>& p, const TensorT<S>& q) {
  require(p.shape.size() == 2 && q.shape.size() == 2, "cosine loss expects BxD tensors, got ",
          shape_str(p.shape), " and ", shape_str(q.shape));
  require(p.shape == q.shape, "cosine loss: shape mismatch ", shape_str(p.shape), " vs ",
          shape_str(q.shape));
}

}  // namespace detail

// Mean over the batch of the negative cosine similarity between rows of p
// and q.
template <typename S>
TensorT<S> neg_cosine(TapeT<S>& tape, const TensorT<S>& p, const TensorT<S>& q) {
  detail::check_rows(p, q);
  TensorT<S> pn = l2_normalize(tape, p);
  TensorT<S> qn = l2_normalize(tape, q);
  TensorT<S> dots = sum(tape, mul(tape, pn, qn));
  return scalar_mul(tape, dots, S(-1) / static_cast<S>(p.shape[0]));
}

// Similarity between the two augmentation views of the same patch:
// 1/2 C(sg(y1), z2) + 1/2 C(sg(y2), z1).
template <typename S>
TensorT<S> intra_sample_loss(TapeT<S>& tape, const TripletBatchT<S>& batch) {
  TensorT<S> a = neg_cosine(tape, stop_gradient(batch.y1), batch.z2);
  TensorT<S> b = neg_cosine(tape, stop_gradient(batch.y2), batch.z1);
  return scalar_mul(tape, add(tape, a, b), S(0.5));
}

// Similarity between views of the two adjacent patches:
// 1/2 C(sg(y2), z3) + 1/2 C(sg(y3), z2).
template <typename S>
TensorT<S> inter_sample_loss(TapeT<S>& tape, const TripletBatchT<S>& batch) {
  TensorT<S> a = neg_cosine(tape, stop_gradient(batch.y2), batch.z3);
  TensorT<S> b = neg_cosine(tape, stop_gradient(batch.y3), batch.z2);
  return scalar_mul(tape, add(tape, a, b), S(0.5));
}

template <typename S>
struct TripletLossT {
  TensorT<S> total;
  TensorT<S> intra;
  TensorT<S> inter;
};

using TripletLoss = TripletLossT<float>;

template <typename S>
TripletLossT<S> simtriplet_loss(TapeT<S>& tape, const TripletBatchT<S>& batch) {
  TripletLossT<S> loss;
  loss.intra = intra_sample_loss(tape, batch);
  loss.inter = inter_sample_loss(tape, batch);
  loss.total = add(tape, loss.intra, loss.inter);
  return loss;
}

// The two-view baseline loss; identical in form to the intra-sample term.
template <typename S>
TensorT<S> simsiam_loss(TapeT<S>& tape, const TensorT<S>& y1, const TensorT<S>& y2,
                        const TensorT<S>& z1, const TensorT<S>& z2) {
  TensorT<S> a = neg_cosine(tape, stop_gradient(y1), z2);
  TensorT<S> b = neg_cosine(tape, stop_gradient(y2), z1);
  return scalar_mul(tape, add(tape, a, b), S(0.5));
}

}  // namespace trisim
