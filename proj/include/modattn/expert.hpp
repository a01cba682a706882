#pragma once

#include <optional>
#include <string>
#include <vector>

#include "modattn/language.hpp"
#include "modattn/world.hpp"

namespace modattn {

struct PfGains {
    double k_attract = 1.0;
    double k_repulse = 1e-3;
    double influence = 0.2;  // repulsion active below this distance
};

// Attraction toward goal plus inverse-square repulsion from the obstacle,
// clipped to the per-step limit.
Vec2 potential_field_step(Vec2 pos, Vec2 goal, Vec2 obstacle, double obstacle_radius,
                          const PfGains& gains = {});

// Stateless scripted expert; the phase is derived from the world state.
class ExpertController {
public:
    explicit ExpertController(const Scenario& scenario) : scenario_(scenario) {}
    Action act(const WorldState& state) const;

private:
    Vec2 move_toward(const WorldState& state, Vec2 goal) const;
    Scenario scenario_;
};

// Runs the expert closed-loop from the reset state and returns the action
// sequence (empty when the expert fails to reach success within bounds).
std::vector<Action> plan_expert(const WorldState& start, const Scenario& scenario);

struct StepRecord {
    Image image;
    std::vector<float> joints;
    float gripper_open = 1.0f;
    Action act;
    Vec2 ee;
    Vec2 tar;
    std::optional<Vec2> obst;
};

struct Demonstration {
    Instruction instruction;
    std::vector<StepRecord> steps;
    RobotId robot = RobotId::A;
    int links = 2;
    Scenario scenario;
};

constexpr int kMinEpisodeSteps = 20;
constexpr int kMaxEpisodeSteps = 200;

// Nullopt when the expert fails (caller reseeds).
std::optional<Demonstration> record_episode(uint64_t seed, const Scenario& scenario,
                                            const RobotVariant& robot, const Vocabulary& vocab);

struct DatasetManifest {
    uint32_t version = 1;
    RobotId robot = RobotId::A;
    uint32_t episodes = 0;
    int image_h = geom::kImage;
    int image_w = geom::kImage;
    int patch_stride = 6;
    uint64_t vocab_hash = 0;
    std::vector<std::string> vocab_words;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Demonstration> episodes;
};

// Episode mix for generation: tasks cycle pick/push/putdown unless
// restricted; the obstacle preset collects push-only episodes.
struct GenSpec {
    int episodes = 0;
    RobotId robot = RobotId::A;
    uint64_t seed = 0;
    bool obstacle = false;
    std::optional<Task> only_task;
};
Dataset generate_dataset(const GenSpec& spec, const Vocabulary& vocab);

std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::string& bytes);
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

}  // namespace modattn
