#include "asmlab/netspec.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace asmlab {

std::string head_role_name(HeadRole role) {
    switch (role) {
        case HeadRole::Logits: return "logits";
        case HeadRole::Depth: return "depth";
        case HeadRole::Normal: return "normal";
        case HeadRole::Raw: return "raw";
    }
    return "raw";
}

HeadRole head_role_from(const std::string& name) {
    if (name == "logits") return HeadRole::Logits;
    if (name == "depth") return HeadRole::Depth;
    if (name == "normal") return HeadRole::Normal;
    if (name == "raw") return HeadRole::Raw;
    throw FormatError("unknown head role '" + name + "'");
}

const LayerSpec* NetworkSpec::find_layer(const std::string& name) const {
    for (const auto& l : layers)
        if (l.name == name) return &l;
    return nullptr;
}

bool NetworkSpec::has_layer(const std::string& name) const { return find_layer(name) != nullptr; }

namespace netdetail {

// Shared by validate() and the forward pass: resolves the spatial extent a
// layer operates at and the per-source upsample factors.
//  - without upsample, all sources must agree;
//  - with upsample, target is max source extent, doubled when all agree,
//    and every source must reach it by an integer factor >= 2.
GatherPlan plan_gather(const LayerSpec& layer, const std::vector<Extent>& sources) {
    GatherPlan plan{};
    std::int64_t max_h = 0, max_w = 0, min_h = INT64_MAX;
    for (const auto& s : sources) {
        max_h = std::max(max_h, s.h);
        max_w = std::max(max_w, s.w);
        min_h = std::min(min_h, s.h);
    }
    plan.h = max_h;
    plan.w = max_w;
    if (layer.upsample && min_h == max_h) {
        plan.h = max_h * 2;
        plan.w = max_w * 2;
    }
    for (const auto& s : sources) {
        if (s.h == plan.h && s.w == plan.w) {
            plan.factors.push_back(1);
            continue;
        }
        if (!layer.upsample) {
            throw ConfigError("layer '" + layer.name +
                              "': sources have mismatched extents and no upsample flag");
        }
        if (plan.h % s.h != 0 || plan.w % s.w != 0 || plan.h / s.h != plan.w / s.w ||
            plan.h / s.h < 2) {
            throw ConfigError("layer '" + layer.name + "': cannot upsample source of extent " +
                              std::to_string(s.h) + "x" + std::to_string(s.w) + " to " +
                              std::to_string(plan.h) + "x" + std::to_string(plan.w));
        }
        plan.factors.push_back(static_cast<int>(plan.h / s.h));
    }
    return plan;
}

}  // namespace netdetail

void NetworkSpec::validate() const {
    if (layers.empty()) throw ConfigError("network spec has no layers");
    if (input_channels.empty()) throw ConfigError("network spec declares no inputs");
    for (const auto& [name, c] : input_channels) {
        if (c < 1) throw ConfigError("input '" + name + "' has non-positive channel count");
    }

    std::set<std::string> known;
    for (const auto& [name, c] : input_channels) known.insert(name);
    for (const auto& l : layers) {
        if (l.name.empty()) throw ConfigError("unnamed layer");
        if (known.count(l.name)) throw ConfigError("duplicate name '" + l.name + "'");
        if (l.inputs.empty()) throw ConfigError("layer '" + l.name + "' has no connections");
        for (const auto& in : l.inputs) {
            if (!known.count(in)) {
                throw ConfigError("layer '" + l.name + "': dangling connection '" + in + "'");
            }
        }
        if (l.kernel < 1 || l.kernel % 2 == 0)
            throw ConfigError("layer '" + l.name + "': kernel must be odd and positive");
        if (l.out_channels < 1) throw ConfigError("layer '" + l.name + "': channels must be >= 1");
        if (l.stride < 1) throw ConfigError("layer '" + l.name + "': stride must be >= 1");
        if (l.repeat < 1) throw ConfigError("layer '" + l.name + "': repeat must be >= 1");
        if (l.upsample && l.stride != 1)
            throw ConfigError("layer '" + l.name + "': upsample layers must have stride 1");
        known.insert(l.name);
    }
    if (heads.empty()) throw ConfigError("network spec declares no output heads");
    std::set<std::string> head_names;
    for (const auto& h : heads) {
        if (!head_names.insert(h.name).second) throw ConfigError("duplicate head '" + h.name + "'");
        if (!has_layer(h.from))
            throw ConfigError("head '" + h.name + "': unknown source layer '" + h.from + "'");
        if (h.channels < 1) throw ConfigError("head '" + h.name + "': channels must be >= 1");
    }
    for (const auto& t : asm_taps) {
        if (!has_layer(t)) throw ConfigError("asm tap '" + t + "' is not a declared layer");
    }
    if (!reg_tap.empty() && !has_layer(reg_tap))
        throw ConfigError("reg tap '" + reg_tap + "' is not a declared layer");

    // shape-only dry run; probe extent large enough for the deepest stride chain
    int stride2 = 0;
    for (const auto& l : layers)
        if (l.stride > 1) ++stride2;
    std::int64_t probe = std::max<std::int64_t>(8, std::int64_t(1) << std::min(stride2, 20));
    std::map<std::string, netdetail::Extent> ext;
    for (const auto& [name, c] : input_channels) ext[name] = netdetail::Extent{c, probe, probe};
    for (const auto& l : layers) {
        std::vector<netdetail::Extent> sources;
        for (const auto& in : l.inputs) sources.push_back(ext.at(in));
        netdetail::GatherPlan plan = netdetail::plan_gather(l, sources);
        const std::int64_t oh = (plan.h + l.stride - 1) / l.stride;
        const std::int64_t ow = (plan.w + l.stride - 1) / l.stride;
        if (oh < 1 || ow < 1)
            throw ConfigError("layer '" + l.name + "': output extent collapsed to zero");
        ext[l.name] = netdetail::Extent{l.out_channels, oh, ow};
    }
}

std::vector<std::pair<int, int>> NetworkSpec::conv_channels() const {
    std::map<std::string, int> ch;
    for (const auto& [name, c] : input_channels) ch[name] = c;
    std::vector<std::pair<int, int>> result;
    for (const auto& l : layers) {
        int in_ch = 0;
        for (const auto& in : l.inputs) in_ch += ch.at(in);
        result.emplace_back(in_ch, l.out_channels);
        for (int r = 1; r < l.repeat; ++r) result.emplace_back(l.out_channels, l.out_channels);
        ch[l.name] = l.out_channels;
    }
    for (const auto& h : heads) result.emplace_back(ch.at(h.from), h.channels);
    return result;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

std::string join(const std::vector<std::string>& v, char sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += sep;
        s += v[i];
    }
    return s;
}

int parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError("bad integer '" + s + "' for " + what);
    }
}

}  // namespace

std::string NetworkSpec::to_text() const {
    std::ostringstream os;
    os << "channel_norm " << (channel_norm ? 1 : 0) << "\n";
    os << "gap_heads " << (gap_heads ? 1 : 0) << "\n";
    for (const auto& [name, c] : input_channels) os << "input " << name << " " << c << "\n";
    os << "taps " << (asm_taps.empty() ? "-" : join(asm_taps, ',')) << "\n";
    os << "regtap " << (reg_tap.empty() ? "-" : reg_tap) << "\n";
    for (const auto& l : layers) {
        os << "layer " << l.name << " " << join(l.inputs, ',') << " " << l.kernel << " "
           << l.out_channels << " " << l.stride << " " << l.repeat << " " << (l.upsample ? 1 : 0)
           << "\n";
    }
    for (const auto& h : heads) {
        os << "head " << h.name << " " << h.from << " " << h.channels << " "
           << head_role_name(h.role) << "\n";
    }
    return os.str();
}

NetworkSpec NetworkSpec::from_text(const std::string& text) {
    NetworkSpec spec;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "channel_norm") {
            int v;
            ls >> v;
            spec.channel_norm = v != 0;
        } else if (kind == "gap_heads") {
            int v;
            ls >> v;
            spec.gap_heads = v != 0;
        } else if (kind == "input") {
            std::string name;
            int c;
            ls >> name >> c;
            if (ls.fail()) throw FormatError("bad input line: " + line);
            spec.input_channels[name] = c;
        } else if (kind == "taps") {
            std::string t;
            ls >> t;
            if (t != "-") spec.asm_taps = split(t, ',');
        } else if (kind == "regtap") {
            std::string t;
            ls >> t;
            if (t != "-") spec.reg_tap = t;
        } else if (kind == "layer") {
            LayerSpec l;
            std::string conns;
            int ups;
            ls >> l.name >> conns >> l.kernel >> l.out_channels >> l.stride >> l.repeat >> ups;
            if (ls.fail()) throw FormatError("bad layer line: " + line);
            l.inputs = split(conns, ',');
            l.upsample = ups != 0;
            spec.layers.push_back(std::move(l));
        } else if (kind == "head") {
            HeadSpec h;
            std::string role;
            ls >> h.name >> h.from >> h.channels >> role;
            if (ls.fail()) throw FormatError("bad head line: " + line);
            h.role = head_role_from(role);
            spec.heads.push_back(std::move(h));
        } else {
            throw FormatError("unknown spec line kind '" + kind + "'");
        }
    }
    spec.validate();
    return spec;
}

NetworkSpec parse_template_text(const std::string& text, int width_divisor,
                                const std::map<std::string, int>& input_channels) {
    if (width_divisor < 1) throw ConfigError("width divisor must be >= 1");
    NetworkSpec spec;
    spec.input_channels = input_channels;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto fields = split(line, '\t');
        if (fields.size() != 7) {
            throw FormatError("template line " + std::to_string(lineno) +
                              ": expected 7 tab-separated fields, got " +
                              std::to_string(fields.size()));
        }
        const std::string& name = fields[0];
        if (name.rfind("output", 0) == 0) {
            HeadSpec h;
            h.name = name;
            auto conns = split(fields[1], ',');
            if (conns.size() != 1)
                throw FormatError("head '" + name + "' must have exactly one connection");
            h.from = conns[0];
            if (parse_int(fields[2], "kernel") != 1)
                throw FormatError("head '" + name + "' must use a 1x1 kernel");
            h.channels = parse_int(fields[3], "channels");
            if (name == "output_depth") h.role = HeadRole::Depth;
            else if (name == "output_normal") h.role = HeadRole::Normal;
            else h.role = HeadRole::Raw;
            spec.heads.push_back(std::move(h));
        } else {
            LayerSpec l;
            l.name = name;
            l.inputs = split(fields[1], ',');
            l.kernel = parse_int(fields[2], "kernel");
            const int table_ch = parse_int(fields[3], "channels");
            l.out_channels = std::max(1, table_ch / width_divisor);
            l.stride = parse_int(fields[4], "stride");
            l.repeat = parse_int(fields[5], "repeat");
            l.upsample = parse_int(fields[6], "upsample") != 0;
            spec.layers.push_back(std::move(l));
        }
    }
    // default taps: the low-to-mid encoder features; default reg tap: the
    // deepest layer before the first upsample
    if (spec.has_layer("conv1")) spec.asm_taps.push_back("conv1");
    if (spec.has_layer("conv2")) spec.asm_taps.push_back("conv2");
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].upsample) {
            if (i > 0) spec.reg_tap = spec.layers[i - 1].name;
            break;
        }
    }
    if (spec.reg_tap.empty() && !spec.layers.empty()) spec.reg_tap = spec.layers.back().name;
    spec.validate();
    return spec;
}

NetworkSpec load_template_file(const std::string& path, int width_divisor,
                               const std::map<std::string, int>& input_channels) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open template file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_template_text(ss.str(), width_divisor, input_channels);
}

}  // namespace asmlab
