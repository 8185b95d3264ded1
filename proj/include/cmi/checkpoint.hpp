#pragma once

// JSON checkpoints: layer shapes with flat parameter arrays, optimizer
// state, Q distributions and the epoch counter.

#include <string>
#include <vector>

#include <json.hpp>

#include "cmi/error.hpp"
#include "cmi/io.hpp"
#include "cmi/nn.hpp"
#include "cmi/trainer.hpp"

namespace cmi {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    nn::MLPModel model;
    nn::OptimizerState optimizer;
    std::vector<std::vector<double>> q;  // empty for CE runs
    int epoch = 0;
};

namespace detail {

inline nlohmann::json tensor_json(const nn::Tensor& t) {
    return {{"shape", {t.rows(), t.cols()}}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

inline nn::Tensor tensor_from_json(const nlohmann::json& j) {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw FormatError("checkpoint: tensor shape must have 2 dimensions");
    return nn::Tensor(shape[0], shape[1], j.at("values").get<std::vector<double>>());
}

inline nlohmann::json layers_json(const std::vector<nn::Layer>& layers) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : layers) arr.push_back({{"weight", tensor_json(l.weight)}, {"bias", tensor_json(l.bias)}});
    return arr;
}

inline std::vector<nn::Layer> layers_from_json(const nlohmann::json& arr) {
    std::vector<nn::Layer> out;
    for (const auto& l : arr) out.push_back({tensor_from_json(l.at("weight")), tensor_from_json(l.at("bias"))});
    return out;
}

}  // namespace detail

inline std::string checkpoint_json(const Checkpoint& ck) {
    const auto& o = ck.optimizer;
    nlohmann::json j = {
        {"format", "cmi-checkpoint"},
        {"version", kCheckpointVersion},
        {"epoch", ck.epoch},
        {"layers", detail::layers_json(ck.model.layers)},
        {"optimizer",
         {{"lr", o.lr},
          {"momentum", o.momentum},
          {"weight_decay", o.weight_decay},
          {"milestones", o.schedule.milestones},
          {"factor", o.schedule.factor},
          {"every_epoch", o.schedule.every_epoch},
          {"last_scheduled_epoch", o.last_scheduled_epoch},
          {"velocity", detail::layers_json(o.velocity.layers)}}},
        {"q", ck.q},
    };
    return j.dump(1) + '\n';
}

inline Checkpoint parse_checkpoint(const std::string& text, const std::string& source = "checkpoint") {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("format") != "cmi-checkpoint") throw FormatError(source + ": not a checkpoint");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw FormatError(source + ": unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
        Checkpoint ck;
        ck.epoch = j.at("epoch").get<int>();
        ck.model.layers = detail::layers_from_json(j.at("layers"));
        ck.model.check();
        const auto& o = j.at("optimizer");
        ck.optimizer.lr = o.at("lr").get<double>();
        ck.optimizer.momentum = o.at("momentum").get<double>();
        ck.optimizer.weight_decay = o.at("weight_decay").get<double>();
        ck.optimizer.schedule.milestones = o.at("milestones").get<std::vector<int>>();
        ck.optimizer.schedule.factor = o.at("factor").get<double>();
        ck.optimizer.schedule.every_epoch = o.at("every_epoch").get<bool>();
        ck.optimizer.last_scheduled_epoch = o.at("last_scheduled_epoch").get<int>();
        ck.optimizer.velocity.layers = detail::layers_from_json(o.at("velocity"));
        if (ck.optimizer.velocity.layers.size() != ck.model.layers.size())
            throw FormatError(source + ": velocity layer count does not match the model");
        for (std::size_t l = 0; l < ck.model.layers.size(); ++l) {
            if (ck.optimizer.velocity.layers[l].weight.shape() != ck.model.layers[l].weight.shape() ||
                ck.optimizer.velocity.layers[l].bias.shape() != ck.model.layers[l].bias.shape())
                throw FormatError(source + ": velocity shape does not match layer " + std::to_string(l));
        }
        ck.q = j.at("q").get<std::vector<std::vector<double>>>();
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(source + ": " + e.what());
    } catch (const DimensionMismatch& e) {
        throw FormatError(source + ": " + e.what());
    }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { io::write_file(path, checkpoint_json(ck)); }

inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(io::read_file(path), path); }

inline Checkpoint make_checkpoint(const train::TrainState& s, bool with_q) {
    Checkpoint ck{s.model, s.optimizer, {}, s.epoch};
    if (with_q)
        for (const auto& qc : s.q.q) ck.q.emplace_back(qc.values().begin(), qc.values().end());
    return ck;
}

}  // namespace cmi
