#pragma once

#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "difflm/data.hpp"
#include "difflm/model.hpp"
#include "difflm/schedule.hpp"
#include "difflm/vocab.hpp"

namespace difflm {

// Everything needed to rebuild a trained denoiser. Parameters are 32-bit.
struct ModelCheckpoint {
  std::string kind = "init";  // init | mlm | diffusion
  TransformerConfig model;
  LengthHeadConfig length;
  bool length_head_trained = false;
  Vocab vocab = Vocab::with_specials({});
  TokenizerMode tokenizer = TokenizerMode::kChar;
  int diffusion_steps = 50;
  ScheduleFamily schedule = ScheduleFamily::kLinear;
  // remap[new id] = id in the vocabulary before pruning; empty when unpruned.
  std::vector<TokenId> remap;
  // Resolved settings of the run that produced the checkpoint, in order.
  std::vector<std::pair<std::string, std::string>> run_config;
  nn::ParameterStore<float> params;
};

// Freshly initialized checkpoint (kind "init").
ModelCheckpoint initial_checkpoint(const TransformerConfig& model, const LengthHeadConfig& length,
                                   Vocab vocab, TokenizerMode tokenizer, uint64_t seed);

// Adds a freshly initialized length head, replacing any existing one.
void attach_length_head(ModelCheckpoint& checkpoint, const LengthHeadConfig& length,
                        uint64_t seed);

std::string checkpoint_header(const ModelCheckpoint& checkpoint);
void write_checkpoint(std::ostream& out, const ModelCheckpoint& checkpoint);
ModelCheckpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ModelCheckpoint& checkpoint);
ModelCheckpoint load_checkpoint(const std::string& path);

std::shared_ptr<const TransformerModel<float>> make_model(const ModelCheckpoint& checkpoint);
NoiseSchedule checkpoint_schedule(const ModelCheckpoint& checkpoint);

}  // namespace difflm
