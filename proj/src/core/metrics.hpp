#pragma once

#include "core/graph.hpp"

namespace ods::metrics {

// mean absolute difference over all pixels and channels
double l1(const Tensor& a, const Tensor& b);

// 10*log10(1/MSE) for unit peak value, capped at 99 dB
double psnr(const Tensor& a, const Tensor& b);

// SSIM with an 11x11 Gaussian window (sigma 1.5), stabilizers for dynamic
// range 1 (C1 = 1e-4, C2 = 9e-4), reflect-101 borders, averaged over
// channels and pixels.
double ssim(const Tensor& a, const Tensor& b);

// (1 - SSIM) / 2
double dssim(const Tensor& a, const Tensor& b);

// (1 - lambda) * l1 + lambda * dssim
double blend_loss(double l1, double dssim, double lambda);

// blend_loss applied to the two image losses
double compute_loss(const Tensor& a, const Tensor& b, double lambda);

// graph builders (differentiable in both images)
ad::NodeId l1_node(ad::Graph& g, ad::NodeId a, ad::NodeId b);
ad::NodeId dssim_node(ad::Graph& g, ad::NodeId a, ad::NodeId b);
ad::NodeId loss_node(ad::Graph& g, ad::NodeId rendered, ad::NodeId target, double lambda);

}  // namespace ods::metrics
