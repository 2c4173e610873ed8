#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualseg/tensor.hpp"

namespace dualseg {

// One line of steps.jsonl, serialized exactly once per optimizer step.
// pseudo_acc fields use -1 as the "no confident pixels" sentinel.
struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  real lr = 0;
  real sup_g = 0, sup_l = 0;
  real ct_g = 0, ct_l = 0;
  real sta = 0;
  real lambda_sta = 0;
  real pseudo_acc_g = -1.0;
  real pseudo_acc_l = -1.0;

  std::string to_json_line() const;
  static StepRecord from_json_line(const std::string& line);
};

std::vector<StepRecord> read_step_records(const std::string& path);

}  // namespace dualseg
