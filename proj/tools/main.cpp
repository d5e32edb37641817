// Command-line front end: corpus synthesis, training, enhancement, baselines,
// evaluation, parameter/FLOPs accounting, attention dumping.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "snet/baselines.hpp"
#include "snet/evalmod.hpp"
#include "snet/objective.hpp"
#include "snet/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw snet::DataError("cannot open config file: " + path);
    return json::parse(f);
}

void write_run_config(const std::string& out_dir, const std::string& command, const json& cfg) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "run_config.json");
    f << json({{"command", command}, {"config", cfg}}).dump(2) << "\n";
}

snet::ModelConfig preset_config(const std::string& name, int64_t M, int64_t P) {
    if (name == "small-8k") return snet::ModelConfig::small(129, M, P);
    if (name == "small-16k") return snet::ModelConfig::small(257, M, P);
    if (name == "large-8k") return snet::ModelConfig::large(129, M, P);
    if (name == "large-16k") return snet::ModelConfig::large(257, M, P);
    if (name == "tiny-8k") return snet::ModelConfig::tiny(129, M, P);
    if (name == "tiny-16k") return snet::ModelConfig::tiny(257, M, P);
    throw snet::UsageError("unknown model preset: " + name);
}

snet::Model<float> model_from_checkpoint(const std::string& path) {
    const snet::Checkpoint c = snet::load_checkpoint(path);
    if (c.config_json.empty()) throw snet::DataError("checkpoint has no embedded model config");
    snet::Model<float> model(snet::ModelConfig::from_json(json::parse(c.config_json)), c.seed);
    snet::checkpoint_to_store(c, model.params());
    return model;
}

int cmd_synth(const std::string& out_dir, const std::string& config_path, int count,
              int64_t seed) {
    snet::CorpusConfig cfg;
    if (!config_path.empty()) cfg = snet::CorpusConfig::from_json(load_json_file(config_path));
    if (count >= 0) cfg.count = count;
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    write_run_config(out_dir, "synth", cfg.to_json());
    const auto records = snet::make_corpus(cfg, out_dir);
    std::cout << "wrote " << records.size() << " scenes to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& manifest, const std::string& out_dir,
              const std::string& config_path, const std::string& model_arg, int64_t epochs,
              int64_t seed, const std::string& resume) {
    const auto records = snet::load_manifest(manifest);
    if (records.empty()) throw snet::DataError("train: empty manifest");
    const std::string base = snet::manifest_dir(manifest);

    snet::TrainConfig tcfg;
    if (!config_path.empty()) tcfg = snet::TrainConfig::from_json(load_json_file(config_path));
    if (epochs > 0) tcfg.epochs = epochs;
    if (seed >= 0) tcfg.seed = static_cast<uint64_t>(seed);
    tcfg.validate();

    std::vector<snet::TrainScene> scenes;
    for (const auto& r : records) scenes.push_back(snet::load_scene(r, base));
    const int sr = scenes[0].mixture.sample_rate;
    const int64_t M = scenes[0].mixture.channels();
    const int64_t P = static_cast<int64_t>(scenes[0].targets.size());
    const int win = tcfg.win > 0 ? tcfg.win : snet::default_win(sr);

    snet::ModelConfig mcfg;
    if (model_arg == "small" || model_arg == "large" || model_arg == "tiny") {
        mcfg = model_arg == "small" ? snet::ModelConfig::small(win / 2 + 1, M, P)
               : model_arg == "large" ? snet::ModelConfig::large(win / 2 + 1, M, P)
                                      : snet::ModelConfig::tiny(win / 2 + 1, M, P);
    } else {
        mcfg = snet::ModelConfig::from_json(load_json_file(model_arg));
    }
    mcfg.validate();

    write_run_config(out_dir, "train",
                     {{"train", tcfg.to_json()},
                      {"model", mcfg.to_json()},
                      {"manifest", manifest},
                      {"resume", resume}});

    snet::Model<float> model(mcfg, tcfg.seed);
    snet::Trainer trainer(model, tcfg);
    if (!resume.empty()) {
        std::string opt = resume;
        const auto pos = opt.rfind(".ckpt");
        if (pos != std::string::npos) opt = opt.substr(0, pos) + ".opt";
        trainer.resume(resume, opt);
    }
    const auto recs = trainer.run(scenes, out_dir, [](const snet::TrainRecord& r) {
        if (r.step % 25 == 0)
            std::cout << snet::sformat("step %6lld epoch %4lld loss %8.3f lr %.6f |g| %.3f\n",
                                       (long long)r.step, (long long)r.epoch, r.loss, r.lr,
                                       r.grad_norm);
    });
    std::cout << "finished " << recs.size() << " steps; checkpoints in " << out_dir << "\n";
    return 0;
}

int cmd_enhance(const std::string& ckpt, const std::string& input, const std::string& out_prefix,
                bool stitch) {
    auto model = model_from_checkpoint(ckpt);
    const snet::Waveform mix = snet::read_wav(input);
    const int P = static_cast<int>(model.config().num_speakers);

    std::vector<std::vector<double>> streams;
    if (stitch) {
        auto proc = [&](const snet::Waveform& chunk) { return snet::enhance_utterance(model, chunk); };
        streams = snet::chunk_and_stitch(proc, mix, P);
    } else {
        streams = snet::enhance_utterance(model, mix);
    }
    const fs::path prefix(out_prefix);
    if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
    for (int p = 0; p < P; ++p) {
        snet::Waveform w(1, static_cast<int64_t>(streams[p].size()), mix.sample_rate);
        w.samples[0] = streams[p];
        snet::write_wav(out_prefix + snet::sformat("_s%d.wav", p + 1), w);
    }
    std::cout << "wrote " << P << " streams with prefix " << out_prefix << "\n";
    return 0;
}

int cmd_eval(const std::string& manifest, const std::string& ckpt, const std::string& est_dir,
             bool stitch, const std::string& out_dir) {
    const auto records = snet::load_manifest(manifest);
    if (records.empty()) throw snet::DataError("eval: empty manifest");
    const std::string base = snet::manifest_dir(manifest);
    write_run_config(out_dir, "eval",
                     {{"manifest", manifest}, {"checkpoint", ckpt}, {"est_dir", est_dir},
                      {"stitch", stitch}});

    std::vector<std::vector<std::vector<double>>> ests, refs;
    std::vector<std::vector<double>> unproc;
    std::unique_ptr<snet::Model<float>> model;
    if (!ckpt.empty()) model = std::make_unique<snet::Model<float>>(model_from_checkpoint(ckpt));

    for (const auto& r : records) {
        const snet::TrainScene scene = snet::load_scene(r, base);
        const int P = static_cast<int>(scene.targets.size());
        std::vector<std::vector<double>> est;
        if (model) {
            if (stitch) {
                auto proc = [&](const snet::Waveform& chunk) {
                    return snet::enhance_utterance(*model, chunk);
                };
                est = snet::chunk_and_stitch(proc, scene.mixture, P);
            } else {
                est = snet::enhance_utterance(*model, scene.mixture);
            }
        } else {
            for (int p = 0; p < P; ++p) {
                const std::string path =
                    (fs::path(est_dir) / snet::sformat("est_%04d_s%d.wav", r.index, p + 1)).string();
                est.push_back(snet::read_wav(path).samples[0]);
            }
        }
        const int64_t n = scene.targets[0].size();
        for (auto& e : est) e.resize(n, 0.0);
        ests.push_back(est);
        refs.push_back(scene.targets);
        unproc.push_back(scene.mixture.samples[r.ref_channel]);
    }
    const auto table = snet::report(ests, refs, unproc);
    const std::string text = snet::format_report(table);
    std::cout << text;
    std::ofstream f(fs::path(out_dir) / "report.tsv");
    f << text;
    return 0;
}

int cmd_baseline(const std::string& kind, const std::string& manifest, const std::string& out_dir,
                 int taps, int delay, int iters) {
    const auto records = snet::load_manifest(manifest);
    if (records.empty()) throw snet::DataError("baseline: empty manifest");
    const std::string base = snet::manifest_dir(manifest);
    write_run_config(out_dir, "baseline " + kind,
                     {{"manifest", manifest}, {"taps", taps}, {"delay", delay}, {"iters", iters}});

    std::vector<std::vector<std::vector<double>>> ests, refs;
    std::vector<std::vector<double>> unproc;
    for (const auto& r : records) {
        const snet::TrainScene scene = snet::load_scene(r, base);
        const int win = snet::default_win(scene.mixture.sample_rate);
        const snet::Spectrogram mix_spec = snet::stft(scene.mixture, win);
        const int P = static_cast<int>(scene.targets.size());
        std::vector<std::vector<double>> est;

        if (kind == "wpe") {
            const snet::Spectrogram derev = snet::wpe(mix_spec, taps, delay, iters);
            const snet::Waveform w = snet::istft(derev);
            for (int p = 0; p < P; ++p) {
                std::vector<double> e = w.samples[r.ref_channel];
                e.resize(scene.targets[0].size(), 0.0);
                est.push_back(std::move(e));
            }
        } else if (kind == "mvdr") {
            const auto rir = snet::read_rir((fs::path(base) / r.rir).string());
            const auto dp = snet::extract_direct_path(rir);
            const snet::Waveform noise =
                snet::read_wav((fs::path(base) / r.noise).string());
            snet::Spectrogram noise_spec;
            bool have_noise = false;
            double ne = 0;
            for (const auto& ch : noise.samples)
                for (double v : ch) ne += v * v;
            if (noise.length() >= win && ne > 0) {
                noise_spec = snet::stft(noise, win);
                have_noise = true;
            }
            for (int p = 0; p < P; ++p) {
                const auto steer = snet::oracle_rtf(dp, p, win, r.ref_channel);
                snet::SpatialCovariance cov;
                if (have_noise) {
                    cov = snet::estimate_covariance(noise_spec);
                } else {
                    cov.F = steer.F;
                    cov.M = steer.M;
                    cov.mat.assign(cov.F * cov.M * cov.M, {0.0, 0.0});
                    for (int64_t f = 0; f < cov.F; ++f)
                        for (int64_t m = 0; m < cov.M; ++m) cov.at(f, m, m) = 1.0;
                }
                const snet::MvdrBeamformer bf(steer, cov);
                const snet::Waveform w = snet::istft(bf.apply(mix_spec));
                std::vector<double> e = w.samples[0];
                e.resize(scene.targets[0].size(), 0.0);
                est.push_back(std::move(e));
            }
        } else {
            throw snet::UsageError("baseline kind must be mvdr or wpe");
        }

        fs::create_directories(fs::path(out_dir) / "wavs");
        for (int p = 0; p < P; ++p) {
            snet::Waveform w(1, static_cast<int64_t>(est[p].size()),
                             scene.mixture.sample_rate);
            w.samples[0] = est[p];
            snet::write_wav((fs::path(out_dir) / "wavs" /
                             snet::sformat("est_%04d_s%d.wav", r.index, p + 1))
                                .string(),
                            w);
        }
        ests.push_back(est);
        refs.push_back(scene.targets);
        unproc.push_back(scene.mixture.samples[r.ref_channel]);
    }
    const auto table = snet::report(ests, refs, unproc);
    const std::string text = snet::format_report(table);
    std::cout << text;
    std::ofstream f(fs::path(out_dir) / "report.tsv");
    f << text;
    return 0;
}

int cmd_flops(const std::string& preset, const std::string& config_path, int64_t mics,
              int64_t speakers, double duration) {
    snet::ModelConfig cfg;
    int sr = 8000;
    if (!config_path.empty()) {
        cfg = snet::ModelConfig::from_json(load_json_file(config_path));
        sr = cfg.num_freqs > 200 ? 16000 : 8000;
    } else {
        cfg = preset_config(preset, mics, speakers);
        sr = preset.find("16k") != std::string::npos ? 16000 : 8000;
    }
    cfg.validate();
    snet::Model<float> model(cfg, 0);
    const auto fl = snet::count_flops(cfg, duration, sr);
    std::cout << snet::sformat("parameters: %lld (%.3f M)\n", (long long)model.param_count(),
                               model.param_count() / 1e6);
    std::cout << snet::sformat(
        "flops (G/s): total %.2f | input %.3f mhsa %.2f tconvffn %.2f freq_conv %.3f "
        "full_band %.3f output %.4f\n",
        fl.total(), fl.input, fl.mhsa, fl.tconvffn, fl.freq_conv, fl.full_band, fl.output);
    std::cout << "per-layer parameters:\n";
    for (const auto& [name, n] : model.describe())
        std::cout << "  " << name << "\t" << n << "\n";
    return 0;
}

int cmd_attn(const std::string& ckpt, const std::string& input, int layer, int head,
             const std::string& out_dir) {
    auto model = model_from_checkpoint(ckpt);
    const snet::Waveform utt = snet::read_wav(input);
    write_run_config(out_dir, "attn",
                     {{"checkpoint", ckpt}, {"input", input}, {"layer", layer}, {"head", head}});
    const auto maps = snet::attention_maps(model, utt, layer, head);
    snet::write_pgm((fs::path(out_dir) / "qk.pgm").string(), maps.T, maps.T, maps.qk);
    snet::write_pgm((fs::path(out_dir) / "fk.pgm").string(), maps.F, maps.T, maps.fk);
    snet::write_csv_grid((fs::path(out_dir) / "qk.csv").string(), maps.T, maps.T, maps.qk);
    snet::write_csv_grid((fs::path(out_dir) / "fk.csv").string(), maps.F, maps.T, maps.fk);
    std::cout << "wrote attention maps to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"snet: multichannel speech separation, denoising and dereverberation"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic scene corpus");
    std::string synth_out, synth_cfg;
    int synth_count = -1;
    int64_t synth_seed = -1;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--config", synth_cfg, "corpus config JSON");
    synth->add_option("--count", synth_count, "number of scenes");
    synth->add_option("--seed", synth_seed, "corpus seed");

    // train
    auto* train = app.add_subcommand("train", "train a model on a scene corpus");
    std::string train_manifest, train_out, train_cfg, train_model = "small", train_resume;
    int64_t train_epochs = -1, train_seed = -1;
    train->add_option("--manifest", train_manifest, "manifest.jsonl")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--config", train_cfg, "training config JSON");
    train->add_option("--model", train_model, "tiny|small|large or model config JSON path");
    train->add_option("--epochs", train_epochs, "override epoch count");
    train->add_option("--seed", train_seed, "override seed");
    train->add_option("--resume", train_resume, "checkpoint to resume from");

    // enhance
    auto* enh = app.add_subcommand("enhance", "enhance a WAV file with a trained model");
    std::string enh_ckpt, enh_in, enh_out;
    bool enh_stitch = false;
    enh->add_option("--checkpoint", enh_ckpt)->required();
    enh->add_option("--input", enh_in)->required();
    enh->add_option("--out", enh_out, "output prefix")->required();
    enh->add_flag("--stitch", enh_stitch, "chunked inference with overlap stitching");

    // eval
    auto* ev = app.add_subcommand("eval", "metric report over a manifest");
    std::string ev_manifest, ev_ckpt, ev_est, ev_out;
    bool ev_stitch = false;
    ev->add_option("--manifest", ev_manifest)->required();
    ev->add_option("--checkpoint", ev_ckpt, "model checkpoint");
    ev->add_option("--est-dir", ev_est, "directory of precomputed estimates");
    ev->add_flag("--stitch", ev_stitch);
    ev->add_option("--out", ev_out, "output directory")->required();

    // baseline
    auto* bl = app.add_subcommand("baseline", "oracle MVDR / WPE reference systems");
    std::string bl_kind, bl_manifest, bl_out;
    int bl_taps = 5, bl_delay = 3, bl_iters = 3;
    bl->add_option("kind", bl_kind, "mvdr|wpe")->required();
    bl->add_option("--manifest", bl_manifest)->required();
    bl->add_option("--out", bl_out)->required();
    bl->add_option("--taps", bl_taps);
    bl->add_option("--delay", bl_delay);
    bl->add_option("--iters", bl_iters);

    // flops
    auto* fl = app.add_subcommand("flops", "parameter count and analytic FLOPs");
    std::string fl_preset = "small-8k", fl_cfg;
    int64_t fl_mics = 6, fl_speakers = 2;
    double fl_dur = 4.0;
    fl->add_option("--preset", fl_preset, "small-8k|small-16k|large-8k|large-16k|tiny-8k");
    fl->add_option("--config", fl_cfg, "model config JSON");
    fl->add_option("--mics", fl_mics);
    fl->add_option("--speakers", fl_speakers);
    fl->add_option("--duration", fl_dur, "utterance length in seconds");

    // attn
    auto* at = app.add_subcommand("attn", "dump attention maps for one utterance");
    std::string at_ckpt, at_in, at_out;
    int at_layer = 0, at_head = 0;
    at->add_option("--checkpoint", at_ckpt)->required();
    at->add_option("--input", at_in)->required();
    at->add_option("--layer", at_layer)->required();
    at->add_option("--head", at_head)->required();
    at->add_option("--out", at_out)->required();

    try {
        app.parse(argc, argv);
        if (*synth) return cmd_synth(synth_out, synth_cfg, synth_count, synth_seed);
        if (*train)
            return cmd_train(train_manifest, train_out, train_cfg, train_model, train_epochs,
                             train_seed, train_resume);
        if (*enh) return cmd_enhance(enh_ckpt, enh_in, enh_out, enh_stitch);
        if (*ev) {
            if (ev_ckpt.empty() && ev_est.empty())
                throw snet::UsageError("eval: need --checkpoint or --est-dir");
            return cmd_eval(ev_manifest, ev_ckpt, ev_est, ev_stitch, ev_out);
        }
        if (*bl) return cmd_baseline(bl_kind, bl_manifest, bl_out, bl_taps, bl_delay, bl_iters);
        if (*fl) return cmd_flops(fl_preset, fl_cfg, fl_mics, fl_speakers, fl_dur);
        if (*at) return cmd_attn(at_ckpt, at_in, at_layer, at_head, at_out);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const snet::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const snet::ShapeError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const snet::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const snet::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
