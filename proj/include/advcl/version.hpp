#ifndef ADVCL_VERSION_HPP
#define ADVCL_VERSION_HPP

namespace advcl {

#ifdef ADVCL_GIT_DESCRIBE
inline constexpr const char* kCodeVersion = "advcl-0.1.0+" ADVCL_GIT_DESCRIBE;
#else
inline constexpr const char* kCodeVersion = "advcl-0.1.0";
#endif

} // namespace advcl

#endif // ADVCL_VERSION_HPP
