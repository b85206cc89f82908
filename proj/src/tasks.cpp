#include "blosa/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

#include "blosa/init.hpp"

namespace blosa {

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::order_pair: return "order_pair";
    case TaskKind::copy_class: return "copy_class";
    case TaskKind::parity: return "parity";
  }
  return "order_pair";
}

TaskKind parse_task(std::string_view name) {
  if (name == "order_pair" || name == "order-pair") return TaskKind::order_pair;
  if (name == "copy_class" || name == "copy-class") return TaskKind::copy_class;
  if (name == "parity") return TaskKind::parity;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

void TaskSpec::validate() const {
  if (vocab < 4) throw std::invalid_argument("task vocabulary must have at least 4 ids");
  if (!(len_mu >= 2.0)) throw std::invalid_argument("mean length must be >= 2");
  if (!(len_sigma >= 0.0)) throw std::invalid_argument("length sigma must be >= 0");
  if (n_train < 0 || n_val < 0) throw std::invalid_argument("split sizes must be >= 0");
  if (kind == TaskKind::copy_class && (classes < 2 || classes > vocab)) {
    throw std::invalid_argument("copy_class needs 2 <= classes <= vocab");
  }
}

Index TaskSpec::max_length() const {
  return std::max<Index>(2, static_cast<Index>(std::ceil(len_mu + 4.0 * len_sigma)));
}

Index label_of(const TaskSpec& spec, const std::vector<Index>& tokens) {
  switch (spec.kind) {
    case TaskKind::order_pair: {
      const auto a = std::find(tokens.begin(), tokens.end(), kTokenA);
      const auto b = std::find(tokens.begin(), tokens.end(), kTokenB);
      if (a == tokens.end() || b == tokens.end()) {
        throw std::invalid_argument("order_pair sequence lacks a designated token");
      }
      return a < b ? 1 : 0;
    }
    case TaskKind::copy_class:
      return tokens.front() % spec.classes;
    case TaskKind::parity:
      return static_cast<Index>(std::count(tokens.begin(), tokens.end(), kTokenA) % 2);
  }
  return 0;
}

namespace {

Index draw_length(const TaskSpec& spec, Rng& rng) {
  std::normal_distribution<double> len(spec.len_mu, spec.len_sigma);
  const double raw = spec.len_sigma > 0 ? len(rng) : spec.len_mu;
  return std::clamp<Index>(static_cast<Index>(std::lround(raw)), 2, spec.max_length());
}

// Sequence of length n with the given label.
std::vector<Index> draw_sequence(const TaskSpec& spec, Index label, Rng& rng) {
  const Index n = draw_length(spec, rng);
  std::vector<Index> tokens(static_cast<std::size_t>(n));
  switch (spec.kind) {
    case TaskKind::order_pair: {
      std::uniform_int_distribution<Index> filler(2, spec.vocab - 1);
      for (Index& t : tokens) t = filler(rng);
      std::uniform_int_distribution<Index> pos(0, n - 1);
      Index first = pos(rng);
      Index second = pos(rng);
      while (second == first) second = pos(rng);
      if (first > second) std::swap(first, second);
      tokens[static_cast<std::size_t>(first)] = label == 1 ? kTokenA : kTokenB;
      tokens[static_cast<std::size_t>(second)] = label == 1 ? kTokenB : kTokenA;
      break;
    }
    case TaskKind::copy_class: {
      std::uniform_int_distribution<Index> any(0, spec.vocab - 1);
      for (Index& t : tokens) t = any(rng);
      std::uniform_int_distribution<Index> step(0, (spec.vocab - 1 - label) / spec.classes);
      tokens.front() = label + spec.classes * step(rng);
      break;
    }
    case TaskKind::parity: {
      std::uniform_int_distribution<Index> filler(1, spec.vocab - 1);
      std::bernoulli_distribution coin(0.3);
      Index count = 0;
      for (Index& t : tokens) {
        t = coin(rng) ? kTokenA : filler(rng);
        count += t == kTokenA;
      }
      if (count % 2 != label) {
        // Flip one position to fix the parity.
        std::uniform_int_distribution<Index> pos(0, n - 1);
        Index& t = tokens[static_cast<std::size_t>(pos(rng))];
        t = t == kTokenA ? filler(rng) : kTokenA;
      }
      break;
    }
  }
  return tokens;
}

std::vector<Example> draw_split(const TaskSpec& spec, Index count, Rng& rng,
                                std::set<std::vector<Index>>& seen) {
  const Index classes = spec.kind == TaskKind::copy_class ? spec.classes : 2;
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    const Index label = i % classes;
    std::vector<Index> tokens;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) {
        throw std::invalid_argument("task spec too small to draw " + std::to_string(count) +
                                    " distinct sequences");
      }
      tokens = draw_sequence(spec, label, rng);
      if (seen.insert(tokens).second) break;
    }
    out.push_back({std::move(tokens), label});
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace

Dataset generate_task(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = substream(seed, "data");
  std::set<std::vector<Index>> seen;
  Dataset ds;
  ds.train = draw_split(spec, spec.n_train, rng, seen);
  ds.val = draw_split(spec, spec.n_val, rng, seen);
  return ds;
}

}  // namespace blosa
