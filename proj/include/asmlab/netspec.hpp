#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "asmlab/errors.hpp"

namespace asmlab {

struct LayerSpec {
    std::string name;
    std::vector<std::string> inputs;  // earlier layer names or input names; >1 means concat
    int kernel = 3;
    int out_channels = 0;
    int stride = 1;
    int repeat = 1;
    bool upsample = false;
};

enum class HeadRole { Logits, Depth, Normal, Raw };
std::string head_role_name(HeadRole role);
HeadRole head_role_from(const std::string& name);

struct HeadSpec {
    std::string name;
    std::string from;
    int channels = 1;
    HeadRole role = HeadRole::Raw;
};

// Layer-graph description. Parameter shapes are derivable from the spec alone,
// so it round-trips through checkpoints without loss.
struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::vector<HeadSpec> heads;
    std::map<std::string, int> input_channels;  // "input" / "input_depth" / "input_normal"
    std::vector<std::string> asm_taps;          // T_asm
    std::string reg_tap;                        // A_t, the layer feeding the reconstruction
    bool channel_norm = false;                  // optional per-channel affine normalization
    bool gap_heads = false;                     // heads read globally pooled features

    // Throws ConfigError naming the offending layer on dangling connections,
    // concat misalignment, or invalid fields. Runs a shape-only dry pass.
    void validate() const;

    // in/out channels per conv in declaration order (repeats expanded)
    std::vector<std::pair<int, int>> conv_channels() const;

    const LayerSpec* find_layer(const std::string& name) const;
    bool has_layer(const std::string& name) const;

    std::string to_text() const;
    static NetworkSpec from_text(const std::string& text);
};

namespace netdetail {
struct Extent {
    int channels;
    std::int64_t h, w;
};
struct GatherPlan {
    std::int64_t h, w;
    std::vector<int> factors;  // per source; 1 = as-is
};
GatherPlan plan_gather(const LayerSpec& layer, const std::vector<Extent>& sources);
}  // namespace netdetail

// Template files: one layer per line,
//   name TAB connections(comma separated) TAB kernel TAB channels TAB stride TAB repeat TAB upsample{0|1}
// Rows whose name starts with "output" declare heads (kernel must be 1).
// width_divisor shrinks hidden channel counts (heads keep their listed width).
NetworkSpec parse_template_text(const std::string& text, int width_divisor,
                                const std::map<std::string, int>& input_channels);
NetworkSpec load_template_file(const std::string& path, int width_divisor,
                               const std::map<std::string, int>& input_channels);

}  // namespace asmlab
