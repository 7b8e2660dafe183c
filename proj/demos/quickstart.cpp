// Tiny end-to-end run on the synthetic dataset: cluster, pretrain, finetune
// with every mode and print SA / RA. Runs in a few seconds.

#include <cstdio>
#include <filesystem>

#include "advcl.hpp"

int main()
{
    using namespace advcl;
    ExperimentConfig cfg;
    for (const char* s : {"synthetic_n=128", "synthetic_test_n=64", "image_size=8", "width=8", "feature_dim=32",
                          "projection_dim=16", "batch_size=32", "pretrain_epochs=2", "fpre_epochs=2",
                          "warmup_epochs=1", "k_list=[2,4]", "frequency_radius=3", "finetune_epochs=4",
                          "finetune_attack_steps=3", "select_attack_steps=3", "ra_steps=5"}) {
        apply_override(cfg, s);
    }
    const auto root = std::filesystem::temp_directory_path() / "advcl_quickstart";
    Pipeline pipe(cfg, root);
    const auto pre = pipe.pretrain_stage();
    std::printf("pretrained encoder: %s\n", pre.file("last.ckpt").c_str());
    for (const char* mode : {"slf", "alf", "aff"}) {
        ExperimentConfig c = cfg;
        c.finetune_mode = mode;
        Pipeline p(c, root);
        const auto ft = p.finetune_stage(pre.file("last.ckpt"));
        const auto ev = p.point_eval_stage(ft.file("finetuned.ckpt"));
        std::printf("%s  SA %.3f  RA %.3f\n", mode, ev.manifest.summary["sa"].get<double>(),
                    ev.manifest.summary["ra"].get<double>());
    }
}
