#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "spermdet/errors.hpp"
#include "spermdet/netdef.hpp"
#include "spermdet/rng.hpp"
#include "spermdet/trainer.hpp"
#include "spermdet/weights_io.hpp"

using namespace spermdet;

namespace {

NetworkDef conv_stack(std::initializer_list<ConvolutionalSpec> convs, int in_c = 3) {
    NetworkDef def;
    def.input_width = def.input_height = 32;
    def.input_channels = in_c;
    for (const ConvolutionalSpec& c : convs) def.layers.emplace_back(c);
    return def;
}

NetworkDef random_def(Rng& rng) {
    NetworkDef def;
    def.input_width = def.input_height = 16;
    def.input_channels = 1 + rng.uniform_int(3);
    const int convs = 1 + rng.uniform_int(5);
    for (int i = 0; i < convs; ++i) {
        ConvolutionalSpec c;
        c.filters = 1 + rng.uniform_int(8);
        c.size = rng.uniform_int(2) ? 3 : 1;
        c.pad = c.size / 2;
        c.batch_normalize = rng.uniform_int(2) != 0;
        def.layers.emplace_back(c);
    }
    return def;
}

}  // namespace

TEST_CASE("a network with no convolutions serializes to exactly the 20-byte header") {
    NetworkDef def;
    def.input_width = def.input_height = 32;
    def.input_channels = 3;
    def.layers.emplace_back(DropoutSpec{0.5f});
    const auto bytes = write_weights(def, {}, WeightsHeader{});
    CHECK(bytes.size() == 20);
}

TEST_CASE("byte counts match param_count") {
    const NetworkDef def = conv_stack({ConvolutionalSpec{16, 3, 1, 1, true, Activation::Leaky}});
    const auto params = init_params(def, 1);
    const auto bytes = write_weights(def, params, WeightsHeader{});
    CHECK(bytes.size() == 2004);  // 20 + 4*496
    CHECK(static_cast<std::int64_t>(bytes.size()) == param_count(def).serialized_bytes);
}

TEST_CASE("the bundled network serializes to its predicted size") {
    const ParsedCfg parsed = parse_cfg(reference_cfg());
    const auto params = init_params(parsed.net, 7);
    const auto bytes = write_weights(parsed.net, params, WeightsHeader{});
    CHECK(static_cast<std::int64_t>(bytes.size()) == param_count(parsed.net).serialized_bytes);
}

TEST_CASE("write then read is a bitwise round trip") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const NetworkDef def = random_def(rng);
        const auto params = init_params(def, 1000 + trial);
        WeightsHeader header;
        header.seen = rng.next_u64() % 1000000;
        const auto bytes = write_weights(def, params, header);

        const LoadedWeights loaded = read_weights(bytes, def);
        CHECK(loaded.header.major == header.major);
        CHECK(loaded.header.minor == header.minor);
        CHECK(loaded.header.seen == header.seen);
        const auto bytes2 = write_weights(def, loaded.params, loaded.header);
        CHECK(bytes == bytes2);
    }
}

TEST_CASE("stream damage is reported precisely") {
    const NetworkDef def = conv_stack({ConvolutionalSpec{4, 3, 1, 1, true, Activation::Leaky},
                                       ConvolutionalSpec{6, 1, 1, 0, false, Activation::Linear}});
    const auto params = init_params(def, 2);
    auto bytes = write_weights(def, params, WeightsHeader{});

    SUBCASE("4 bytes short truncates the last layer") {
        bytes.resize(bytes.size() - 4);
        try {
            read_weights(bytes, def);
            FAIL("expected WeightsError");
        } catch (const WeightsError& e) {
            CHECK(e.kind == WeightsError::Kind::Truncated);
            CHECK(e.detail == 1);  // layer index of the damaged conv
        }
    }
    SUBCASE("4 extra bytes are trailing garbage") {
        bytes.insert(bytes.end(), {1, 2, 3, 4});
        try {
            read_weights(bytes, def);
            FAIL("expected WeightsError");
        } catch (const WeightsError& e) {
            CHECK(e.kind == WeightsError::Kind::TrailingBytes);
            CHECK(e.detail == 4);
        }
    }
    SUBCASE("minor version below 2 is rejected") {
        bytes[4] = 1;  // minor lives at offset 4
        try {
            read_weights(bytes, def);
            FAIL("expected WeightsError");
        } catch (const WeightsError& e) {
            CHECK(e.kind == WeightsError::Kind::BadHeader);
        }
    }
    SUBCASE("stream shorter than the header") {
        bytes.resize(10);
        CHECK_THROWS_AS(read_weights(bytes, def), WeightsError);
    }
}

TEST_CASE("partial loading") {
    const NetworkDef def = conv_stack({ConvolutionalSpec{4, 3, 1, 1, true, Activation::Leaky},
                                       ConvolutionalSpec{8, 3, 1, 1, true, Activation::Leaky},
                                       ConvolutionalSpec{6, 1, 1, 0, false, Activation::Linear}});
    const auto donor_params = init_params(def, 5);
    const auto donor_bytes = write_weights(def, donor_params, WeightsHeader{});

    SUBCASE("first_n_layers = 0 falls back to fresh initialization") {
        const auto params = load_partial(donor_bytes, def, 0, 99);
        const auto fresh = init_params(def, 99);
        CHECK(params[0].weights.data == fresh[0].weights.data);
        CHECK(params[2].weights.data == fresh[2].weights.data);
    }
    SUBCASE("full prefix equals read_weights") {
        const auto params = load_partial(donor_bytes, def, static_cast<int>(def.layers.size()), 99);
        const auto full = read_weights(donor_bytes, def).params;
        for (std::size_t i = 0; i < full.size(); ++i) {
            CHECK(params[i].weights.data == full[i].weights.data);
            CHECK(params[i].bias == full[i].bias);
        }
    }
    SUBCASE("donor stem transfers bit-exactly into a different-head recipient") {
        NetworkDef recipient = def;
        std::get<ConvolutionalSpec>(recipient.layers[2]).filters = 10;  // new head width
        const auto params = load_partial(donor_bytes, recipient, 2, 99);
        CHECK(params[0].weights.data == donor_params[0].weights.data);
        CHECK(params[0].bias == donor_params[0].bias);
        CHECK(params[0].bn->rolling_var == donor_params[0].bn->rolling_var);
        CHECK(params[1].weights.data == donor_params[1].weights.data);
        CHECK(params[2].weights.n == 10);
        CHECK(params[2].weights.data == init_params(recipient, 99)[2].weights.data);
    }
    SUBCASE("donor too short for the prefix is a prefix mismatch") {
        std::vector<std::uint8_t> short_bytes(donor_bytes.begin(), donor_bytes.begin() + 40);
        try {
            load_partial(short_bytes, def, 2, 99);
            FAIL("expected WeightsError");
        } catch (const WeightsError& e) {
            CHECK(e.kind == WeightsError::Kind::PrefixShapeMismatch);
        }
    }
    SUBCASE("donor bytes beyond the prefix are ignored") {
        const auto params = load_partial(donor_bytes, def, 1, 99);
        CHECK(params[0].weights.data == donor_params[0].weights.data);
        CHECK(params[1].weights.data == init_params(def, 99)[1].weights.data);
    }
}

TEST_CASE("param_count agrees with the floats the stream actually carries") {
    Rng rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        const NetworkDef def = random_def(rng);
        const auto bytes = write_weights(def, init_params(def, trial), WeightsHeader{});
        const ParamCount pc = param_count(def);
        CHECK(static_cast<std::int64_t>(bytes.size()) == 20 + 4 * pc.total_floats);
    }
}
