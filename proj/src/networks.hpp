#pragma once

#include "fedcast/model.hpp"

#include <memory>

namespace fedcast::nn::detail {

std::unique_ptr<Network> make_mlp(const ModelSpec& spec);
std::unique_ptr<Network> make_recurrent(const ModelSpec& spec);
std::unique_ptr<Network> make_cnn(const ModelSpec& spec);

}  // namespace fedcast::nn::detail
