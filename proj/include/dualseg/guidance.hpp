#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dualseg/nn.hpp"
#include "dualseg/tensor.hpp"

namespace dualseg {

struct ConceptSet {
  std::vector<std::string> class_names;               // defines row order
  std::vector<std::vector<std::string>> concepts;     // one list per class
  std::string template_str = "a remote sensing image of {}.";

  std::string format(const std::string& concept_text) const;
  void validate() const;  // every class non-empty, exactly one {} slot

  // class name plus two phrase variants standing in for synonyms
  static ConceptSet defaults_for(const std::vector<std::string>& class_names,
                                 const std::string& template_str);
  static ConceptSet load(const std::filesystem::path& json_path,
                         const std::vector<std::string>& class_names,
                         const std::string& template_str);
};

struct TextEncoder {
  int dim = 0;
  bool frozen = true;
  std::function<std::vector<real>(const std::string&)> embed;
};

struct PrototypeMatrix {
  Tensor values;  // [K, d_txt] constant; never receives gradients
  int text_dim = 0;
};

enum class QueryKind { explicit_projected, implicit_learnable };

struct QuerySet {
  Tensor values;  // [K, d]
  QueryKind kind = QueryKind::implicit_learnable;
  bool trainable = false;  // for explicit queries, applies to the projection only
};

// Deterministic hashed embedding; distinct strings land near-orthogonal.
std::vector<real> stub_text_encoder(const std::string& text, int d_txt);
TextEncoder make_stub_text_encoder(int d_txt);
// Checkpoint-backed encoder: a token embedding table (mean of token rows,
// L2-normalized). This is the plug-in point for externally trained weights.
TextEncoder load_embedding_table_encoder(const std::filesystem::path& checkpoint_dir);

// Eq-style prototype build: row k = L2-normalized mean of its concept
// embeddings. A zero-mean (degenerate) prototype is an error.
PrototypeMatrix encode_concepts(const ConceptSet& concepts, const TextEncoder& encoder);

QuerySet project_prototypes(const PrototypeMatrix& prototypes, const Linear& projection);
QuerySet init_learnable_queries(int class_count, int dim, std::uint64_t seed);

}  // namespace dualseg
