#pragma once

#include <map>
#include <string>

#include "medvt/model.hpp"

namespace medvt::cfg {

// Flat UTF-8 key=value config ('#' starts a comment). Unknown keys are an
// error; values use the same names as the model hyperparameters.
std::map<std::string, std::string> parse_kv(const std::string& text);

model::ModelConfig from_kv(const std::map<std::string, std::string>& kv, model::ModelConfig base = {});
model::ModelConfig load_file(const std::string& path, model::ModelConfig base = {});
std::string to_text(const model::ModelConfig& c);

}  // namespace medvt::cfg
