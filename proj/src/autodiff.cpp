#include "lsc/autodiff.hpp"

// The tape is a class template; instantiate the two element types used by the
// library here so every other translation unit links against one copy.
namespace lsc::ad {
template class TapeT<float>;
template class TapeT<double>;
}  // namespace lsc::ad
