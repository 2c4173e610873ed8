#include "dualseg/records.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace dualseg {

using nlohmann::json;

std::string StepRecord::to_json_line() const {
  json j{{"step", step},
         {"epoch", epoch},
         {"lr", lr},
         {"sup_g", sup_g},
         {"sup_l", sup_l},
         {"ct_g", ct_g},
         {"ct_l", ct_l},
         {"sta", sta},
         {"lambda_sta", lambda_sta},
         {"pseudo_acc_g", pseudo_acc_g},
         {"pseudo_acc_l", pseudo_acc_l}};
  return j.dump();
}

StepRecord StepRecord::from_json_line(const std::string& line) {
  json j = json::parse(line);
  StepRecord r;
  r.step = j.at("step").get<std::int64_t>();
  r.epoch = j.at("epoch").get<int>();
  r.lr = j.at("lr").get<real>();
  r.sup_g = j.at("sup_g").get<real>();
  r.sup_l = j.at("sup_l").get<real>();
  r.ct_g = j.at("ct_g").get<real>();
  r.ct_l = j.at("ct_l").get<real>();
  r.sta = j.at("sta").get<real>();
  r.lambda_sta = j.at("lambda_sta").get<real>();
  r.pseudo_acc_g = j.at("pseudo_acc_g").get<real>();
  r.pseudo_acc_l = j.at("pseudo_acc_l").get<real>();
  return r;
}

std::vector<StepRecord> read_step_records(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("records: cannot open " + path);
  std::vector<StepRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) out.push_back(StepRecord::from_json_line(line));
  }
  return out;
}

}  // namespace dualseg
