// gog_cli: encode, decode, group, run, synth, eval, upper-bound and bench.

#include <gog/gog.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace gog;

namespace {

// Config flags ----------------------------------------------------------------

struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> values;  // config key -> raw flag text
    int threads = -1;
};

std::string kebab(std::string s)
{
    std::replace(s.begin(), s.end(), '_', '-');
    return s;
}

void add_config_flags(CLI::App& app, ConfigFlags& flags)
{
    app.add_option("--config", flags.config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--threads", flags.threads, "worker threads (0: all cores)");

    const std::map<std::string, std::string> aliases = {
        {"interpolation", "--interp"}, {"keypoint_threshold", "--kp-thresh"}};
    for (const auto& key : config_keys()) {
        if (key == "oks_kappas" || key == "oks_thresholds" || key == "threads") continue;
        std::string names = "--" + kebab(key);
        if (auto it = aliases.find(key); it != aliases.end()) names += "," + it->second;
        app.add_option_function<std::string>(
            names, [&flags, key](const std::string& v) { flags.values[key] = v; },
            "overrides config key " + key);
    }
}

json flag_value(const std::string& key, const std::string& raw)
{
    if (key == "skeleton") return fs::absolute(raw).string();
    const json parsed = json::parse(raw, nullptr, false);
    if (!parsed.is_discarded() && (parsed.is_number() || parsed.is_boolean())) return parsed;
    return raw;
}

/// Config file values, then flag values on top.
RunConfig resolve_config(const ConfigFlags& flags)
{
    json doc = json::object();
    fs::path base;
    if (!flags.config_path.empty()) {
        try {
            doc = read_json(flags.config_path);
        } catch (const IoError& e) {
            if (e.kind() == IoErrorKind::format) throw ConfigError(ConfigErrorKind::parse, e.what());
            throw;
        }
        if (!doc.is_object()) throw ConfigError(ConfigErrorKind::parse, "config: expected a JSON object");
        base = fs::path(flags.config_path).parent_path();
    }
    for (const auto& [key, raw] : flags.values) doc[key] = flag_value(key, raw);
    if (flags.threads >= 0) doc["threads"] = flags.threads;
    return parse_config(doc, base);
}

json config_summary(const RunConfig& cfg)
{
    const auto& pc = cfg.pipeline;
    return {{"stride", cfg.stride},
            {"sigma", pc.encode.sigma},
            {"supervision_area", pc.encode.supervision_area},
            {"variant", to_string(pc.variant)},
            {"interpolation", to_string(pc.decode.interpolation)},
            {"keypoint_threshold", pc.decode.keypoint_threshold},
            {"top_k", pc.decode.top_k},
            {"local_max_window", pc.decode.local_max_window},
            {"limb_score_threshold", pc.group.limb_score_threshold},
            {"min_keypoints", pc.group.min_keypoints},
            {"pose_score_threshold", pc.group.pose_score_threshold},
            {"top_k_limbs", pc.group.top_k_limbs},
            {"greedy_order", to_string(pc.group.order)}};
}

void emit(const json& doc, const std::string& out, int indent = -1)
{
    if (out.empty() || out == "-") std::cout << doc.dump(indent) << '\n';
    else write_json(doc, out, indent);
}

// Tensor loading --------------------------------------------------------------

GridSpec spec_for(const RunConfig& cfg, const Tensor3<float>& heatmaps)
{
    const GridSpec spec = cfg.grid(heatmaps.cols() * cfg.stride, heatmaps.rows() * cfg.stride);
    spec.validate();
    if (heatmaps.channels() != spec.num_types || heatmaps.rows() != spec.grid_rows() ||
        heatmaps.cols() != spec.grid_cols())
        throw std::invalid_argument("heatmaps have shape [" + std::to_string(heatmaps.channels()) +
                                    ", " + std::to_string(heatmaps.rows()) + ", " +
                                    std::to_string(heatmaps.cols()) + "], expected [" +
                                    std::to_string(spec.num_types) + ", " +
                                    std::to_string(spec.grid_rows()) + ", " +
                                    std::to_string(spec.grid_cols()) + "]");
    return spec;
}

GuidingOffsetField load_offsets(const fs::path& path, const GridSpec& spec, const Skeleton& skeleton)
{
    auto values = read_tensor(path);
    if (values.channels() != 2 * skeleton.num_limbs() || values.rows() != spec.grid_rows() ||
        values.cols() != spec.grid_cols())
        throw std::invalid_argument(path.string() + ": guiding offsets must have shape [" +
                                    std::to_string(2 * skeleton.num_limbs()) + ", " +
                                    std::to_string(spec.grid_rows()) + ", " +
                                    std::to_string(spec.grid_cols()) + "]");
    return {spec, std::move(values), {}};
}

RefinementOffsetField load_refinement(const fs::path& path, const GridSpec& spec)
{
    return {spec, read_tensor(path), {}};
}

// Subcommands -----------------------------------------------------------------

struct EncodeArgs {
    std::string annotations;
    std::string out_dir;
};

int cmd_encode(const EncodeArgs& a, const ConfigFlags& flags)
{
    const auto cfg = resolve_config(flags);
    const auto images = load_annotations(a.annotations);
    fs::create_directories(a.out_dir);
    const int workers = worker_count(cfg.threads);
    parallel_for(static_cast<int>(images.size()), workers, [&](int, int i) {
        const auto& img = images[static_cast<std::size_t>(i)];
        const GridSpec spec = cfg.grid(img.width, img.height);
        EncodeConfig enc = cfg.pipeline.encode;
        enc.variant = cfg.pipeline.variant;
        const auto prefix = fs::path(a.out_dir) / std::to_string(img.id);
        write_tensor(encode_heatmaps(img.persons, spec, enc).values, prefix.string() + "_heatmaps.npy");
        write_tensor(encode_guiding_offsets(img.persons, cfg.pipeline.skeleton, spec, enc).values,
                     prefix.string() + "_offsets.npy");
        write_tensor(encode_refinement_offsets(img.persons, spec).values, prefix.string() + "_ro.npy");
    });
    std::cerr << "encoded " << images.size() << " images into " << a.out_dir << '\n';
    return 0;
}

struct DecodeArgs {
    std::string heatmaps;
    std::string ro;
    std::string out;
    long long image_id = 0;
};

int cmd_decode(const DecodeArgs& a, const ConfigFlags& flags)
{
    const auto cfg = resolve_config(flags);
    const auto values = read_tensor(a.heatmaps);
    const HeatmapTensor h{spec_for(cfg, values), values};
    CandidateSet set{a.image_id, h.spec.width, h.spec.height, {}};
    if (!a.ro.empty()) set.candidates = decode_with_refinement(h, load_refinement(a.ro, h.spec), cfg.pipeline.decode);
    else set.candidates = decode_keypoints(h, cfg.pipeline.decode, worker_count(cfg.threads));
    emit(candidates_to_json(set), a.out);
    return 0;
}

struct GroupArgs {
    std::string candidates;
    std::string offsets;
    std::string out;
};

int cmd_group(const GroupArgs& a, const ConfigFlags& flags)
{
    const auto cfg = resolve_config(flags);
    const auto set = candidates_from_json(read_json(a.candidates));
    const GridSpec spec = cfg.grid(set.width, set.height);
    spec.validate();
    const auto& skel = cfg.pipeline.skeleton;
    const auto offsets = load_offsets(a.offsets, spec, skel);
    auto poses = gog_group(collect_limbs(set.candidates, offsets, skel, cfg.pipeline.group), skel,
                           cfg.pipeline.group);
    poses = score_and_filter(std::move(poses), cfg.pipeline.group);
    emit(poses_to_json(set.image_id, poses), a.out);
    return 0;
}

struct RunArgs {
    std::string annotations;
    std::vector<std::string> heatmaps;
    std::vector<std::string> offsets;
    std::vector<std::string> ro;
    std::string out;
    std::string report;
};

int cmd_run(const RunArgs& a, const ConfigFlags& flags)
{
    const auto cfg = resolve_config(flags);
    const bool from_gt = !a.annotations.empty();
    if (from_gt == !a.heatmaps.empty())
        throw std::invalid_argument("run: give either --annotations or --heatmaps/--offsets");
    if (!from_gt && a.offsets.size() != a.heatmaps.size())
        throw std::invalid_argument("run: need one --offsets file per --heatmaps file");
    if (!a.ro.empty() && a.ro.size() != a.heatmaps.size())
        throw std::invalid_argument("run: need one --ro file per --heatmaps file");

    std::vector<AnnotatedImage> images;
    if (from_gt) images = load_annotations(a.annotations);
    const std::size_t n = from_gt ? images.size() : a.heatmaps.size();

    const int workers = worker_count(cfg.threads);
    const int inner = n == 1 ? workers : 1;
    std::vector<std::vector<PoseSkeleton>> poses(n);
    std::vector<StageTimes> times(n);
    std::vector<long long> ids(n);
    const auto start = std::chrono::steady_clock::now();
    parallel_for(static_cast<int>(n), workers, [&](int, int ii) {
        const auto i = static_cast<std::size_t>(ii);
        if (from_gt) {
            const auto& img = images[i];
            ids[i] = img.id;
            const auto t = encode_ground_truth(img.persons, cfg.grid(img.width, img.height), cfg.pipeline);
            poses[i] = estimate_poses(t.heatmaps, t.offsets, t.refinement ? &*t.refinement : nullptr,
                                      cfg.pipeline, inner, &times[i]);
            return;
        }
        ids[i] = static_cast<long long>(i);
        const auto values = read_tensor(a.heatmaps[i]);
        const HeatmapTensor h{spec_for(cfg, values), values};
        const auto offsets = load_offsets(a.offsets[i], h.spec, cfg.pipeline.skeleton);
        std::optional<RefinementOffsetField> ro;
        if (!a.ro.empty()) ro = load_refinement(a.ro[i], h.spec);
        poses[i] = estimate_poses(h, offsets, ro ? &*ro : nullptr, cfg.pipeline, inner, &times[i]);
    });
    const double wall =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    json out = json::array();
    std::size_t total_poses = 0;
    StageTimes sum;
    for (std::size_t i = 0; i < n; ++i) {
        out = poses_to_json(ids[i], poses[i], std::move(out));
        total_poses += poses[i].size();
        sum.peaks += times[i].peaks;
        sum.top_k += times[i].top_k;
        sum.limbs += times[i].limbs;
        sum.gog += times[i].gog;
        sum.filter += times[i].filter;
    }
    emit(out, a.out);

    if (!a.report.empty()) {
        const json report = {
            {"images", n},
            {"poses", total_poses},
            {"workers", workers},
            {"wall_ms", wall},
            {"stage_ms", {{"peaks", sum.peaks}, {"top_k", sum.top_k}, {"limbs", sum.limbs},
                          {"gog", sum.gog}, {"filter", sum.filter}, {"decode", sum.decode()},
                          {"group", sum.group()}, {"total", sum.total()}}},
            {"config", config_summary(cfg)}};
        write_json(report, a.report, 2);
    }
    return 0;
}

struct SynthArgs {
    int persons = 3;
    std::uint64_t seed = 0;
    double separation = 0.0;
    int images = 1;
    std::string out;
};

int cmd_synth(const SynthArgs& a, const ConfigFlags& flags)
{
    const auto cfg = resolve_config(flags);
    const GridSpec spec = cfg.grid(640, 640);
    std::vector<AnnotatedImage> images;
    for (int i = 0; i < a.images; ++i)
        images.push_back(generate_scene(a.persons, spec, a.separation, a.seed + static_cast<std::uint64_t>(i))
                             .to_image(i));
    emit(annotations_to_json(images), a.out);
    return 0;
}

struct EvalArgs {
    std::string gt;
    std::string pred;
    std::string out;
};

json ap_json(const ApReport& r)
{
    return {{"ap", r.ap}, {"thresholds", r.thresholds}, {"per_threshold", r.per_threshold}};
}

int cmd_eval(const EvalArgs& a, const ConfigFlags& flags)
{
    const auto cfg = resolve_config(flags);
    const auto images = load_annotations(a.gt);
    const auto pred = poses_from_json(read_json(a.pred), cfg.num_types);
    std::vector<std::vector<Person>> gt;
    std::vector<std::vector<PoseSkeleton>> matched;
    for (const auto& img : images) {
        gt.push_back(img.persons);
        const auto it = pred.find(img.id);
        matched.push_back(it == pred.end() ? std::vector<PoseSkeleton>{} : it->second);
    }
    emit(ap_json(average_precision(gt, matched, cfg.oks)), a.out, 2);
    return 0;
}

struct UpperBoundArgs {
    std::string gt;
    int synthetic = 0;
    int persons = 3;
    double separation = 260.0;
    std::uint64_t seed = 0;
    std::vector<int> strides{4};
    std::vector<std::string> variants{"standard"};
    std::vector<std::string> interpolations{"bicubic"};
    std::string out;
};

int cmd_upper_bound(const UpperBoundArgs& a, const ConfigFlags& flags)
{
    const auto cfg = resolve_config(flags);
    if (a.gt.empty() == (a.synthetic <= 0))
        throw std::invalid_argument("upper-bound: give either --gt or --synthetic");
    std::vector<AnnotatedImage> images;
    if (!a.gt.empty()) {
        images = load_annotations(a.gt);
    } else {
        const GridSpec spec = cfg.grid(640, 640);
        for (int i = 0; i < a.synthetic; ++i)
            images.push_back(generate_scene(a.persons, spec, a.separation,
                                            a.seed + static_cast<std::uint64_t>(i))
                                 .to_image(i));
    }

    json configs = json::object();
    const int workers = worker_count(cfg.threads);
    for (int stride : a.strides)
        for (const auto& variant : a.variants)
            for (const auto& interp : a.interpolations) {
                auto pc = cfg.pipeline;
                pc.variant = parse_variant(variant);
                pc.decode.interpolation = parse_interpolation(interp);
                const auto r = upper_bound_run(images, stride, pc, cfg.oks, workers);
                std::size_t poses = 0;
                for (const auto& p : r.poses) poses += p.size();
                auto entry = ap_json(r.ap);
                entry["stride"] = stride;
                entry["variant"] = variant;
                entry["interpolation"] = interp;
                entry["seconds"] = r.seconds;
                entry["poses"] = poses;
                configs["R=" + std::to_string(stride) + "/" + variant + "/" + interp] = entry;
            }
    emit({{"images", images.size()}, {"configs", configs}}, a.out, 2);
    return 0;
}

struct BenchArgs {
    int iters = 50;
    int warmup = 3;
    int persons = 3;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_bench(const BenchArgs& a, const ConfigFlags& flags)
{
    if (a.iters < 1) throw std::invalid_argument("bench: --iters must be >= 1");
    const auto cfg = resolve_config(flags);
    const GridSpec spec = cfg.grid(640, 640);
    const auto scene = generate_scene(a.persons, spec, 0.0, a.seed);
    const auto t = encode_ground_truth(scene.persons, spec, cfg.pipeline);
    const auto* ro = t.refinement ? &*t.refinement : nullptr;
    const int workers = worker_count(cfg.threads);

    std::vector<StageTimes> samples;
    std::size_t poses = 0;
    for (int i = 0; i < a.warmup + a.iters; ++i) {
        StageTimes st;
        poses = estimate_poses(t.heatmaps, t.offsets, ro, cfg.pipeline, workers, &st).size();
        if (i >= a.warmup) samples.push_back(st);
    }

    const auto stat = [&](auto get) {
        std::vector<double> v;
        for (const auto& s : samples) v.push_back(get(s));
        std::sort(v.begin(), v.end());
        const auto at = [&](double q) {
            return v[std::min(v.size() - 1, static_cast<std::size_t>(q * static_cast<double>(v.size())))];
        };
        return json{{"median_ms", at(0.5)}, {"p95_ms", at(0.95)}};
    };
    const json stages = {{"peaks", stat([](const StageTimes& s) { return s.peaks; })},
                         {"top_k", stat([](const StageTimes& s) { return s.top_k; })},
                         {"limbs", stat([](const StageTimes& s) { return s.limbs; })},
                         {"gog", stat([](const StageTimes& s) { return s.gog; })},
                         {"filter", stat([](const StageTimes& s) { return s.filter; })},
                         {"decode", stat([](const StageTimes& s) { return s.decode(); })},
                         {"total", stat([](const StageTimes& s) { return s.total(); })}};
    emit({{"iters", a.iters},
          {"workers", workers},
          {"persons", a.persons},
          {"poses", poses},
          {"tensor", {{"heatmap_channels", t.heatmaps.values.channels()},
                      {"offset_channels", t.offsets.values.channels()},
                      {"rows", t.heatmaps.values.rows()},
                      {"cols", t.heatmaps.values.cols()}}},
          {"stages", stages},
          {"config", config_summary(cfg)}},
         a.out, 2);
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Bottom-up pose post-processing: encode, decode, group and evaluate"};
    app.require_subcommand(1);

    ConfigFlags flags;

    EncodeArgs enc;
    auto* encode = app.add_subcommand("encode", "encode annotations into training targets");
    encode->add_option("--annotations", enc.annotations)->required()->check(CLI::ExistingFile);
    encode->add_option("--out-dir", enc.out_dir)->required();
    add_config_flags(*encode, flags);

    DecodeArgs dec;
    auto* decode = app.add_subcommand("decode", "heatmaps to keypoint candidates");
    decode->add_option("--heatmaps", dec.heatmaps)->required();
    decode->add_option("--ro", dec.ro, "refinement offsets; switches to the refinement decode");
    decode->add_option("--image-id", dec.image_id);
    decode->add_option("--out", dec.out, "output file (default stdout)");
    add_config_flags(*decode, flags);

    GroupArgs grp;
    auto* group = app.add_subcommand("group", "candidates and guiding offsets to poses");
    group->add_option("--candidates", grp.candidates)->required();
    group->add_option("--offsets", grp.offsets)->required();
    group->add_option("--out", grp.out);
    add_config_flags(*group, flags);

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "decode and group tensors, or the ground-truth upper bound");
    run->add_option("--annotations", run_args.annotations, "encode these annotations as input");
    run->add_option("--heatmaps", run_args.heatmaps)->expected(1, -1);
    run->add_option("--offsets", run_args.offsets)->expected(1, -1);
    run->add_option("--ro", run_args.ro)->expected(1, -1);
    run->add_option("--out", run_args.out);
    run->add_option("--report", run_args.report, "stage timings and counts");
    add_config_flags(*run, flags);

    SynthArgs syn;
    auto* synth = app.add_subcommand("synth", "synthetic annotations");
    synth->add_option("--persons", syn.persons)->check(CLI::PositiveNumber);
    synth->add_option("--seed", syn.seed);
    synth->add_option("--separation", syn.separation, "minimum centroid distance, pixels");
    synth->add_option("--images", syn.images)->check(CLI::PositiveNumber);
    synth->add_option("--out", syn.out);
    add_config_flags(*synth, flags);

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "OKS average precision of predictions");
    eval->add_option("--gt", ev.gt)->required();
    eval->add_option("--pred", ev.pred)->required();
    eval->add_option("--out", ev.out);
    add_config_flags(*eval, flags);

    UpperBoundArgs ub;
    auto* upper = app.add_subcommand("upper-bound", "AP of decoding encoded ground truth");
    upper->add_option("--gt", ub.gt, "annotations (ours or COCO)");
    upper->add_option("--synthetic", ub.synthetic, "number of synthetic scenes instead of --gt");
    upper->add_option("--persons", ub.persons);
    upper->add_option("--separation", ub.separation);
    upper->add_option("--seed", ub.seed);
    upper->add_option("--strides", ub.strides)->expected(1, -1);
    upper->add_option("--variants", ub.variants)->expected(1, -1);
    upper->add_option("--interpolations", ub.interpolations)->expected(1, -1);
    upper->add_option("--out", ub.out);
    add_config_flags(*upper, flags);

    BenchArgs bn;
    auto* bench = app.add_subcommand("bench", "per-stage latency on a synthetic tensor set");
    bench->add_option("--iters", bn.iters);
    bench->add_option("--warmup", bn.warmup);
    bench->add_option("--persons", bn.persons);
    bench->add_option("--seed", bn.seed);
    bench->add_option("--out", bn.out);
    add_config_flags(*bench, flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*encode) return cmd_encode(enc, flags);
        if (*decode) return cmd_decode(dec, flags);
        if (*group) return cmd_group(grp, flags);
        if (*run) return cmd_run(run_args, flags);
        if (*synth) return cmd_synth(syn, flags);
        if (*eval) return cmd_eval(ev, flags);
        if (*upper) return cmd_upper_bound(ub, flags);
        if (*bench) return cmd_bench(bn, flags);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
