#pragma once

#include <algorithm>
#include <cmath>

namespace weblabel {

template <typename T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <typename T>
T softplus(T z) {
  // log(1 + e^z) without overflow for large |z|.
  return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}

// Binary cross entropy from the logit, stable for any z and t in {0,1}.
template <typename T>
T bce_with_logits(T logit, T target) {
  return std::max(logit, T(0)) - logit * target +
         std::log1p(std::exp(-std::abs(logit)));
}

}  // namespace weblabel
