#include "dualseg/guidance.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <cmath>
#include <fstream>

#include "dualseg/checkpoint.hpp"
#include "dualseg/rng.hpp"

namespace dualseg {

using nlohmann::json;

std::string ConceptSet::format(const std::string& concept_text) const {
  const auto slot = template_str.find("{}");
  std::string out = template_str;
  out.replace(slot, 2, concept_text);
  return out;
}

void ConceptSet::validate() const {
  const auto first = template_str.find("{}");
  if (first == std::string::npos || template_str.find("{}", first + 1) != std::string::npos)
    throw std::runtime_error("concepts: template must contain exactly one {} slot");
  if (class_names.size() != concepts.size())
    throw std::runtime_error("concepts: class list and concept lists differ in length");
  for (size_t k = 0; k < concepts.size(); ++k)
    if (concepts[k].empty())
      throw std::runtime_error("concepts: class '" + class_names[k] + "' has no concepts");
}

ConceptSet ConceptSet::defaults_for(const std::vector<std::string>& class_names,
                                    const std::string& template_str) {
  ConceptSet cs;
  cs.class_names = class_names;
  cs.template_str = template_str;
  for (const auto& name : class_names)
    cs.concepts.push_back({name, "a region of " + name, "an area covered by " + name});
  cs.validate();
  return cs;
}

ConceptSet ConceptSet::load(const std::filesystem::path& json_path,
                            const std::vector<std::string>& class_names,
                            const std::string& template_str) {
  std::ifstream f(json_path);
  if (!f) throw std::runtime_error("concepts: cannot open " + json_path.string());
  json j = json::parse(f);
  ConceptSet cs;
  cs.class_names = class_names;
  cs.template_str = template_str;
  for (const auto& name : class_names) {
    if (!j.contains(name))
      throw std::runtime_error("concepts: file lacks entry for class '" + name + "'");
    cs.concepts.push_back(j.at(name).get<std::vector<std::string>>());
  }
  cs.validate();
  return cs;
}

std::vector<real> stub_text_encoder(const std::string& text, int d_txt) {
  // order-sensitive hash over the lowercased token sequence
  std::uint64_t h = 0x6d75616c736567ull;
  std::string token;
  auto flush = [&]() {
    if (!token.empty()) {
      h = mix64(h * 0x100000001b3ull ^ hash_str(token));
      token.clear();
    }
  };
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    else
      flush();
  }
  flush();

  Rng rng(h);
  std::vector<real> v(d_txt);
  real norm2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm2 += x * x;
  }
  const real inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

TextEncoder make_stub_text_encoder(int d_txt) {
  TextEncoder enc;
  enc.dim = d_txt;
  enc.embed = [d_txt](const std::string& text) { return stub_text_encoder(text, d_txt); };
  return enc;
}

TextEncoder load_embedding_table_encoder(const std::filesystem::path& checkpoint_dir) {
  TensorStore store = TensorStore::load(checkpoint_dir);
  const auto& table = store.get("token_embedding");

  std::ifstream vf(checkpoint_dir / "vocab.json");
  if (!vf) throw std::runtime_error("encoder: missing vocab.json in " + checkpoint_dir.string());
  json vocab = json::parse(vf);

  auto rows = std::make_shared<std::vector<std::vector<real>>>();
  auto index = std::make_shared<std::unordered_map<std::string, int>>();
  const int dim = table.cols;
  rows->resize(table.rows);
  for (int r = 0; r < table.rows; ++r)
    (*rows)[r].assign(table.data.begin() + static_cast<size_t>(r) * dim,
                      table.data.begin() + static_cast<size_t>(r + 1) * dim);
  for (auto it = vocab.begin(); it != vocab.end(); ++it) {
    const int row = it.value().get<int>();
    if (row < 0 || row >= table.rows)
      throw std::runtime_error("encoder: vocab row out of range for token '" + it.key() + "'");
    (*index)[it.key()] = row;
  }

  TextEncoder enc;
  enc.dim = dim;
  enc.embed = [rows, index, dim](const std::string& text) {
    std::vector<real> acc(dim, 0.0);
    int used = 0;
    std::string token;
    auto flush = [&]() {
      if (token.empty()) return;
      auto it = index->find(token);
      if (it != index->end()) {
        const auto& row = (*rows)[it->second];
        for (int i = 0; i < dim; ++i) acc[i] += row[i];
        ++used;
      }
      token.clear();
    };
    for (char c : text) {
      if (std::isalnum(static_cast<unsigned char>(c)))
        token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      else
        flush();
    }
    flush();
    if (used == 0) return stub_text_encoder(text, dim);  // out-of-vocab fallback
    real norm2 = 0.0;
    for (real x : acc) norm2 += x * x;
    if (norm2 > 0) {
      const real inv = 1.0 / std::sqrt(norm2);
      for (auto& x : acc) x *= inv;
    }
    return acc;
  };
  return enc;
}

PrototypeMatrix encode_concepts(const ConceptSet& concepts, const TextEncoder& encoder) {
  concepts.validate();
  const int K = static_cast<int>(concepts.class_names.size());
  const int d = encoder.dim;
  std::vector<real> values(static_cast<size_t>(K) * d, 0.0);
  for (int k = 0; k < K; ++k) {
    const auto& list = concepts.concepts[k];
    for (const auto& c : list) {
      const auto e = encoder.embed(concepts.format(c));
      if (static_cast<int>(e.size()) != d)
        throw std::runtime_error("encode_concepts: encoder returned wrong dimension");
      for (int i = 0; i < d; ++i) values[static_cast<size_t>(k) * d + i] += e[i];
    }
    real norm2 = 0.0;
    for (int i = 0; i < d; ++i) {
      values[static_cast<size_t>(k) * d + i] /= static_cast<real>(list.size());
      norm2 += values[static_cast<size_t>(k) * d + i] * values[static_cast<size_t>(k) * d + i];
    }
    if (norm2 < 1e-16)
      throw std::runtime_error("encode_concepts: degenerate prototype for class '" +
                               concepts.class_names[k] + "' (zero mean embedding)");
    const real inv = 1.0 / std::sqrt(norm2);
    for (int i = 0; i < d; ++i) values[static_cast<size_t>(k) * d + i] *= inv;
  }
  PrototypeMatrix proto;
  proto.values = Tensor::from(K, d, std::move(values));  // constant: no grad path
  proto.text_dim = d;
  return proto;
}

QuerySet project_prototypes(const PrototypeMatrix& prototypes, const Linear& projection) {
  if (prototypes.values.cols() != projection.W.rows())
    throw std::invalid_argument("project_prototypes: dimension mismatch");
  QuerySet qs;
  qs.values = projection.forward(prototypes.values);
  qs.kind = QueryKind::explicit_projected;
  qs.trainable = true;  // the projection, never the prototypes
  return qs;
}

QuerySet init_learnable_queries(int class_count, int dim, std::uint64_t seed) {
  if (class_count <= 0 || dim <= 0)
    throw std::invalid_argument("init_learnable_queries: sizes must be positive");
  Rng rng(derive_seed(seed, "queries"));
  std::vector<real> v(static_cast<size_t>(class_count) * dim);
  for (auto& x : v) x = rng.normal() * 0.02;
  QuerySet qs;
  qs.values = Tensor::param(class_count, dim, std::move(v));
  qs.kind = QueryKind::implicit_learnable;
  qs.trainable = true;
  return qs;
}

}  // namespace dualseg
