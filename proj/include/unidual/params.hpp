#pragma once

#include <functional>
#include <string>

#include "unidual/tensor.hpp"

namespace unidual {

// Routing label that decides which losses may update a parameter.
enum class ParamGroup {
  Shared,
  ImageBranch,
  VideoBranch,
  HeadImage,
  HeadVideo,
  HeadAuxImage,
  HeadAuxVideo,
};

inline const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Shared: return "shared";
    case ParamGroup::ImageBranch: return "image_branch";
    case ParamGroup::VideoBranch: return "video_branch";
    case ParamGroup::HeadImage: return "head_image";
    case ParamGroup::HeadVideo: return "head_video";
    case ParamGroup::HeadAuxImage: return "head_aux_image";
    case ParamGroup::HeadAuxVideo: return "head_aux_video";
  }
  return "?";
}

template <class T>
struct Parameter {
  std::string name;
  Var<T> tensor;
  bool trainable = true;
  ParamGroup group = ParamGroup::Shared;
};

// Named parameters in registration order; that order is also the checkpoint
// record order, so it must be deterministic.
template <class T>
class ParamRegistry {
 public:
  Var<T> create(const std::string& name, Shape shape, ParamGroup group,
                bool trainable) {
    require(!find(name), "duplicate parameter name: " + name);
    auto v = make_var<T>(std::move(shape), trainable);
    items_.push_back({name, v, trainable, group});
    return v;
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : items_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : items_)
      if (p.name == name) return &p;
    return nullptr;
  }

  const std::vector<Parameter<T>>& items() const { return items_; }

  void remove_groups(std::initializer_list<ParamGroup> groups) {
    std::erase_if(items_, [&](const Parameter<T>& p) {
      for (ParamGroup g : groups)
        if (p.group == g) return true;
      return false;
    });
  }

  int64_t total_values() const {
    int64_t n = 0;
    for (const auto& p : items_) n += int64_t(p.tensor->size());
    return n;
  }

  void clear_grads() {
    for (auto& p : items_) p.tensor->clear_grad();
  }

 private:
  std::vector<Parameter<T>> items_;
};

enum class Init { FanInUniform, Zero, One };

// How block builders obtain parameters: the network assembler owns naming
// seeds and initialization, blocks only declare what they need.
template <class T>
using ParamFactory = std::function<Var<T>(
    const std::string& name, Shape shape, ParamGroup group, bool trainable,
    Init init)>;

}  // namespace unidual
