#include "spermdet/tensor.hpp"

#include <cstring>

namespace spermdet {

Tensor Tensor::slice(int sample) const {
    Tensor out(1, c, h, w);
    std::memcpy(out.data.data(), data.data() + index(sample, 0, 0, 0), out.size() * sizeof(float));
    return out;
}

}  // namespace spermdet
