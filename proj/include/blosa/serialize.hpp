#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <string>

#include "blosa/param_store.hpp"

namespace blosa {

// Model container:
//
//   blosa-model 1
//   byte-order: little-endian
//   config: <count>
//   <key>=<value>                      (count lines, sorted by key)
//   params: <count>
//   <path>:<d0>x<d1>...:<dtype>:<role>  (count lines, store order; rank 0 is "scalar")
//   end
//
// followed by each parameter's raw IEEE-754 buffer, little-endian, in
// manifest order with no padding.

using ConfigMap = std::map<std::string, std::string>;

/// Shortest decimal text that parses back to exactly v.
std::string format_double(double v);

class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct ModelFile {
  ConfigMap config;
  ParamStore<Scalar> params;
};

template <typename Scalar>
void write_model(std::ostream& os, const ConfigMap& config, const ParamStore<Scalar>& params);

/// Reads a container written with the same dtype; throws FormatError otherwise.
template <typename Scalar>
ModelFile<Scalar> read_model(std::istream& is);

template <typename Scalar>
void save_model(const std::string& path, const ConfigMap& config, const ParamStore<Scalar>& params);

template <typename Scalar>
ModelFile<Scalar> load_model(const std::string& path);

}  // namespace blosa
