#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "blosa/tensor.hpp"

namespace blosa {

enum class TaskKind {
  order_pair,  // tokens A and B each appear once; label 1 iff A precedes B
  copy_class,  // label = first token mod classes
  parity,      // label = number of A tokens mod 2
};

std::string_view task_name(TaskKind kind);
TaskKind parse_task(std::string_view name);

struct TaskSpec {
  TaskKind kind = TaskKind::order_pair;
  Index vocab = 16;
  double len_mu = 24.0;
  double len_sigma = 6.0;
  Index classes = 2;
  Index n_train = 8000;
  Index n_val = 1000;

  void validate() const;
  Index max_length() const;
};

struct Example {
  std::vector<Index> tokens;
  Index label = 0;
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> val;
};

// Reserved ids for the order-sensitive tasks; all other ids are filler.
inline constexpr Index kTokenA = 0;
inline constexpr Index kTokenB = 1;

/// Deterministic in (spec, seed). Labels of binary tasks alternate before a
/// shuffle, so each split is balanced to within one example. No validation
/// sequence also occurs in the training split.
Dataset generate_task(const TaskSpec& spec, std::uint64_t seed);

/// Label under the task's rule.
Index label_of(const TaskSpec& spec, const std::vector<Index>& tokens);

}  // namespace blosa
