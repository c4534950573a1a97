#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "phonodist/blocks.hpp"

namespace phonodist::entropy {

enum class Estimator { plugin, miller_madow, nsb };

Estimator estimator_from_string(std::string_view name);
std::string_view to_string(Estimator e);

// Plug-in block entropy -sum p ln p in nats.
double entropy_plugin(const blocks::BlockDistribution& dist);

// Plug-in plus the (K1 - 1) / 2N first-order bias correction.
double entropy_miller_madow(const blocks::BlockDistribution& dist);

struct NsbDiagnostics {
  double xi_peak = 0.0;
  double beta_peak = 0.0;
  double log_evidence_peak = 0.0;
  int evaluations = 0;
  int panels = 0;
};

struct NsbResult {
  double entropy = 0.0;
  double stderr_ = 0.0;
  NsbDiagnostics diag;
};

// Nemenman-Shafee-Bialek estimate: posterior mean and sd of the entropy under
// a flat prior over the expected entropy xi(beta) of symmetric Dirichlet
// priors with `alphabet_size` bins. Throws if alphabet_size is smaller than
// the observed support or if the quadrature fails to converge.
NsbResult entropy_nsb(const blocks::BlockDistribution& dist, double alphabet_size);

// Same computation from a (count, multiplicity) histogram over observed bins.
NsbResult nsb_from_multiplicities(const std::vector<std::pair<double, double>>& count_mult,
                                  double n_samples, double alphabet_size);

struct EntropyCurve {
  std::vector<double> values;   // H_0 .. H_r_upper, H_0 == 0, nats
  Estimator estimator = Estimator::plugin;
  std::vector<double> stderrs;  // per-r posterior sd (nsb only), else empty
};

// NSB block alphabets use min(L^r, observed support * alphabet_cap_factor).
EntropyCurve block_entropy_curve(const corpus::PhonemeStream& stream, int r_upper,
                                 Estimator estimator, double alphabet_cap_factor = 1e6);

struct GainSequence {
  std::vector<double> values;  // G_0 .. G_{len-3}
};

// G_u = -(H_{u+2} - 2 H_{u+1} + H_u); requires a curve of length >= 3.
GainSequence predictability_gain(const EntropyCurve& curve);

// Delete-one-block jackknife standard errors of the gain estimates.
std::vector<double> gain_jackknife_stderr(const corpus::PhonemeStream& stream, int r_upper,
                                          Estimator estimator, int n_blocks = 20,
                                          double alphabet_cap_factor = 1e6);

struct OrderEstimate {
  int m = 0;
  double tolerance = 0.0;
  bool censored = false;        // no u in range satisfied the criterion
  bool coarse_confirms = true;  // coarse-grained gains stay below tolerance for u >= m
  GainSequence fine;
  std::vector<GainSequence> coarse;
};

// Smallest u0 with G_u <= tolerance for all u >= u0 on the fine alphabet.
// Coarse-grained sequences are advisory: they can confirm the order (they
// extend to larger u) but never raise it.
OrderEstimate estimate_order(const GainSequence& gains_fine,
                             const std::vector<GainSequence>& gains_coarse, double tolerance);

double default_order_tolerance(const std::vector<double>& gain_stderrs, double floor = 0.01);

}  // namespace phonodist::entropy
