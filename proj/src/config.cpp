#include "medvt/config.hpp"

#include <sstream>

#include "medvt/io.hpp"

namespace medvt::cfg {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(trim(part));
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

}  // namespace

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key=value: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config: empty key on line " + std::to_string(lineno));
    kv[key] = val;
  }
  return kv;
}

model::ModelConfig from_kv(const std::map<std::string, std::string>& kv, model::ModelConfig c) {
  for (const auto& [key, v] : kv) {
    if (key == "T") c.T = std::stoll(v);
    else if (key == "H") c.H = std::stoll(v);
    else if (key == "W") c.W = std::stoll(v);
    else if (key == "num_classes") c.num_classes = std::stoi(v);
    else if (key == "d") c.d = std::stoi(v);
    else if (key == "N_h") c.n_heads = std::stoi(v);
    else if (key == "N_d") c.n_dec_iterations = std::stoi(v);
    else if (key == "D") c.label_dim = std::stoi(v);
    else if (key == "bb_widths") {
      c.bb_widths.clear();
      for (const auto& p : split_commas(v)) c.bb_widths.push_back(std::stoll(p));
    } else if (key == "head_width") c.head_width = std::stoi(v);
    else if (key == "gn_groups") c.gn_groups = std::stoi(v);
    else if (key == "num_encoded_scales") c.num_encoded_scales = std::stoi(v);
    else if (key == "enc_blocks") {
      c.enc_blocks.clear();
      for (const auto& p : split_commas(v)) c.enc_blocks.push_back(std::stoi(p));
    } else if (key == "num_decoder_scales") c.num_decoder_scales = std::stoi(v);
    else if (key == "pe") {
      if (v == "sinusoidal3d") c.pe = attn::PeKind::sinusoidal3d;
      else if (v == "learnable") c.pe = attn::PeKind::learnable;
      else throw std::invalid_argument("config: pe must be sinusoidal3d|learnable");
    } else if (key == "query_pe") {
      if (v == "sinusoidal") c.query_pe = attn::PeKind::sinusoidal3d;
      else if (v == "learnable") c.query_pe = attn::PeKind::learnable;
      else throw std::invalid_argument("config: query_pe must be learnable|sinusoidal");
    } else if (key == "query_mode") {
      if (v == "per_frame") c.query_mode = dec::QueryMode::per_frame;
      else if (v == "per_clip") c.query_mode = dec::QueryMode::per_clip;
      else throw std::invalid_argument("config: query_mode must be per_frame|per_clip");
    } else if (key == "qmap") {
      if (v == "frame_sliced") c.qmap = dec::QueryMapMode::frame_sliced;
      else if (v == "query_mean") c.qmap = dec::QueryMapMode::query_mean;
      else throw std::invalid_argument("config: qmap must be frame_sliced|query_mean");
    } else if (key == "labelprop") c.labelprop = parse_bool(v, key);
    else if (key == "prop_rule") {
      if (v == "mtom") c.prop_rule = attn::MaskKind::mtom;
      else if (v == "mto1") c.prop_rule = attn::MaskKind::mto1;
      else throw std::invalid_argument("config: prop_rule must be mtom|mto1");
    } else if (key == "combine_space") {
      if (v == "logits") c.combine_space = lp::CombineSpace::logits;
      else if (v == "probabilities") c.combine_space = lp::CombineSpace::probabilities;
      else throw std::invalid_argument("config: combine_space must be logits|probabilities");
    } else if (key == "between_scale_ffn") c.between_scale_ffn = parse_bool(v, key);
    else if (key == "scale_by_head_dim") c.scale_by_head_dim = parse_bool(v, key);
    else if (key == "focal_alpha") c.loss.focal_alpha = std::stod(v);
    else if (key == "focal_gamma") c.loss.focal_gamma = std::stod(v);
    else if (key == "dice_eps") c.loss.dice_eps = std::stod(v);
    else if (key == "lambda_focal") c.loss.lambda_focal = std::stod(v);
    else if (key == "lambda_dice") c.loss.lambda_dice = std::stod(v);
    else if (key == "lr") c.lr = std::stod(v);
    else if (key == "weight_decay") c.weight_decay = std::stod(v);
    else if (key == "beta1") c.beta1 = std::stod(v);
    else if (key == "beta2") c.beta2 = std::stod(v);
    else if (key == "adam_eps") c.adam_eps = std::stod(v);
    else if (key == "stage1_iters") c.stage1_iters = std::stoll(v);
    else if (key == "stage2_iters") c.stage2_iters = std::stoll(v);
    else if (key == "batch_size") c.batch_size = std::stoll(v);
    else if (key == "seed") c.seed = std::stoull(v);
    else if (key == "dtype") {
      if (v == "f32") c.dtype = Dtype::f32;
      else if (v == "f64") c.dtype = Dtype::f64;
      else throw std::invalid_argument("config: dtype must be f32|f64");
    } else if (key == "augment_hflip") c.augment_hflip = parse_bool(v, key);
    else throw std::invalid_argument("config: unknown key: " + key);
  }
  return c;
}

model::ModelConfig load_file(const std::string& path, model::ModelConfig base) {
  return from_kv(parse_kv(io::read_text_file(path)), base);
}

std::string to_text(const model::ModelConfig& c) {
  std::ostringstream os;
  os << "T=" << c.T << "\nH=" << c.H << "\nW=" << c.W << "\nnum_classes=" << c.num_classes << "\n";
  os << "d=" << c.d << "\nN_h=" << c.n_heads << "\nN_d=" << c.n_dec_iterations << "\nD=" << c.label_dim << "\n";
  os << "bb_widths=";
  for (size_t i = 0; i < c.bb_widths.size(); ++i) os << (i ? "," : "") << c.bb_widths[i];
  os << "\nhead_width=" << c.head_width << "\ngn_groups=" << c.gn_groups << "\n";
  os << "num_encoded_scales=" << c.num_encoded_scales << "\nenc_blocks=";
  for (size_t i = 0; i < c.enc_blocks.size(); ++i) os << (i ? "," : "") << c.enc_blocks[i];
  os << "\nnum_decoder_scales=" << c.num_decoder_scales << "\n";
  os << "pe=" << (c.pe == attn::PeKind::sinusoidal3d ? "sinusoidal3d" : "learnable") << "\n";
  os << "query_pe=" << (c.query_pe == attn::PeKind::learnable ? "learnable" : "sinusoidal") << "\n";
  os << "query_mode=" << (c.query_mode == dec::QueryMode::per_frame ? "per_frame" : "per_clip") << "\n";
  os << "qmap=" << (c.qmap == dec::QueryMapMode::frame_sliced ? "frame_sliced" : "query_mean") << "\n";
  os << "labelprop=" << (c.labelprop ? 1 : 0) << "\n";
  os << "prop_rule=" << (c.prop_rule == attn::MaskKind::mtom ? "mtom" : "mto1") << "\n";
  os << "combine_space=" << (c.combine_space == lp::CombineSpace::logits ? "logits" : "probabilities") << "\n";
  os << "between_scale_ffn=" << (c.between_scale_ffn ? 1 : 0) << "\n";
  os << "scale_by_head_dim=" << (c.scale_by_head_dim ? 1 : 0) << "\n";
  os << "focal_alpha=" << c.loss.focal_alpha << "\nfocal_gamma=" << c.loss.focal_gamma << "\n";
  os << "dice_eps=" << c.loss.dice_eps << "\nlambda_focal=" << c.loss.lambda_focal << "\nlambda_dice="
     << c.loss.lambda_dice << "\n";
  os << "lr=" << c.lr << "\nweight_decay=" << c.weight_decay << "\nbeta1=" << c.beta1 << "\nbeta2=" << c.beta2
     << "\nadam_eps=" << c.adam_eps << "\n";
  os << "stage1_iters=" << c.stage1_iters << "\nstage2_iters=" << c.stage2_iters << "\nbatch_size=" << c.batch_size
     << "\nseed=" << c.seed << "\n";
  os << "dtype=" << (c.dtype == Dtype::f32 ? "f32" : "f64") << "\naugment_hflip=" << (c.augment_hflip ? 1 : 0)
     << "\n";
  return os.str();
}

}  // namespace medvt::cfg
