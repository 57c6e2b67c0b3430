// Runs the cascade on one scene with trained checkpoints and prints the
// detection set as JSON.
//
//   detect_scene HRN.cnnc HPN.cnnc SCENE.scnr [VALIDITY.scnr]

#include <iostream>
#include <optional>

#include "tilecascade/cascade.hpp"
#include "tilecascade/nn/checkpoint.hpp"
#include "tilecascade/raster.hpp"

int main(int argc, char** argv)
{
    if (argc < 4 || argc > 5) {
        std::cerr << "usage: " << argv[0] << " HRN.cnnc HPN.cnnc SCENE.scnr [VALIDITY.scnr]\n";
        return 2;
    }
    namespace tc = tilecascade;
    try {
        const auto hrn = tc::nn::load_checkpoint(argv[1]).network;
        const auto hpn = tc::nn::load_checkpoint(argv[2]).network;
        const auto scene = tc::read_scene(argv[3]);
        std::optional<tc::ValidityMask> validity;
        if (argc == 5) validity = tc::read_validity(argv[4]);

        const auto scores = tc::infer_dense(hrn, scene, validity ? &*validity : nullptr);
        const auto dets = tc::detect_from_scores(scene, scores, hpn, tc::CascadeConfig{});
        std::cout << tc::to_json(dets).dump(2) << '\n';
    } catch (const tc::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
