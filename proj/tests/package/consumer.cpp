#include <cstdio>
#include <string>

#include "cvcs/geometry.hpp"
#include "cvcs/version.hpp"

int main() {
    const cvcs::Tensor maps[] = {cvcs::Tensor({1, 1, 1, 1}, 1.0), cvcs::Tensor({1, 1, 1, 1}, 1.0)};
    const cvcs::Tensor masks[] = {cvcs::Tensor({1, 1}, 1.0), cvcs::Tensor({1, 1}, 1.0)};
    const auto w = cvcs::geom::camera_weight_maps(maps, masks);
    std::printf("cvcs %s: %.2f %.2f\n", cvcs::version(), w[0].item(),
                w[1].item());
    return w[0].item() == 0.5 ? 0 : 1;
}
