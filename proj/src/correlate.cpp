#include "bevloc/correlate.hpp"

#include <fftw3.h>

#include <bit>
#include <cstring>
#include <mutex>
#include <stdexcept>

namespace bevloc {

namespace {

// FFTW plan creation/destruction is not thread-safe; execution is.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

int next_pow2(int n) {
  return static_cast<int>(std::bit_ceil(static_cast<unsigned>(n)));
}

struct FftwBuffer {
  double* ptr = nullptr;
  explicit FftwBuffer(std::size_t n) : ptr(fftw_alloc_real(n)) {}
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

struct FftwComplexBuffer {
  fftw_complex* ptr = nullptr;
  explicit FftwComplexBuffer(std::size_t n) : ptr(fftw_alloc_complex(n)) {}
  ~FftwComplexBuffer() { fftw_free(ptr); }
  FftwComplexBuffer(const FftwComplexBuffer&) = delete;
  FftwComplexBuffer& operator=(const FftwComplexBuffer&) = delete;
};

}  // namespace

struct CorrelationEngine::Impl {
  int ref_h, ref_w, tpl_h, tpl_w, channels;
  int pad_h, pad_w, freq_w;
  FftwBuffer real;
  FftwComplexBuffer freq;
  FftwComplexBuffer accum;
  std::vector<std::complex<double>> ref_spectrum;  // channels * pad_h * freq_w
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;

  Impl(const FeatureMap& ref, int th, int tw)
      : ref_h(ref.height),
        ref_w(ref.width),
        tpl_h(th),
        tpl_w(tw),
        channels(ref.channels),
        pad_h(next_pow2(ref.height + th - 1)),
        pad_w(next_pow2(ref.width + tw - 1)),
        freq_w(pad_w / 2 + 1),
        real(static_cast<std::size_t>(pad_h) * pad_w),
        freq(static_cast<std::size_t>(pad_h) * freq_w),
        accum(static_cast<std::size_t>(pad_h) * freq_w) {
    {
      std::lock_guard lock(fftw_mutex());
      fwd = fftw_plan_dft_r2c_2d(pad_h, pad_w, real.ptr, freq.ptr, FFTW_ESTIMATE);
      inv = fftw_plan_dft_c2r_2d(pad_h, pad_w, accum.ptr, real.ptr, FFTW_ESTIMATE);
    }
    ref_spectrum.resize(static_cast<std::size_t>(channels) * pad_h * freq_w);
    for (int c = 0; c < channels; ++c) {
      load_channel(ref, c);
      fftw_execute(fwd);
      std::memcpy(ref_spectrum.data() + static_cast<std::size_t>(c) * pad_h * freq_w,
                  freq.ptr, sizeof(fftw_complex) * pad_h * freq_w);
    }
  }

  ~Impl() {
    std::lock_guard lock(fftw_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }

  void load_channel(const FeatureMap& m, int c) {
    std::memset(real.ptr, 0, sizeof(double) * pad_h * pad_w);
    for (int r = 0; r < m.height; ++r) {
      const float* row = m.data.data() + static_cast<std::size_t>(r) * m.width * m.channels;
      double* dst = real.ptr + static_cast<std::size_t>(r) * pad_w;
      for (int x = 0; x < m.width; ++x) dst[x] = row[static_cast<std::size_t>(x) * m.channels + c];
    }
  }

  CorrelationMap correlate(const FeatureMap& tpl) {
    if (tpl.channels != channels)
      throw std::invalid_argument("fft_cross_correlate: channel mismatch");
    if (tpl.height != tpl_h || tpl.width != tpl_w)
      throw std::invalid_argument("fft_cross_correlate: template dims differ from engine setup");

    const std::size_t nfreq = static_cast<std::size_t>(pad_h) * freq_w;
    std::memset(accum.ptr, 0, sizeof(fftw_complex) * nfreq);
    for (int c = 0; c < channels; ++c) {
      load_channel(tpl, c);
      fftw_execute(fwd);
      const std::complex<double>* rf =
          ref_spectrum.data() + static_cast<std::size_t>(c) * nfreq;
      // accum += F(ref) * conj(F(tpl)) summed over channels
      for (std::size_t i = 0; i < nfreq; ++i) {
        const std::complex<double> tf(freq.ptr[i][0], freq.ptr[i][1]);
        const std::complex<double> prod = rf[i] * std::conj(tf);
        accum.ptr[i][0] += prod.real();
        accum.ptr[i][1] += prod.imag();
      }
    }
    fftw_execute(inv);

    CorrelationMap out;
    out.height = ref_h + tpl_h - 1;
    out.width = ref_w + tpl_w - 1;
    out.planes = 1;
    out.offset_row0 = -(tpl_h - 1);
    out.offset_col0 = -(tpl_w - 1);
    out.values.resize(static_cast<std::size_t>(out.height) * out.width);
    const double scale = 1.0 / (static_cast<double>(pad_h) * pad_w);
    for (int i = 0; i < out.height; ++i) {
      const int dy = out.offset_row0 + i;
      const int ry = (dy + pad_h) % pad_h;
      const double* src = real.ptr + static_cast<std::size_t>(ry) * pad_w;
      float* dst = out.values.data() + static_cast<std::size_t>(i) * out.width;
      for (int j = 0; j < out.width; ++j) {
        const int dx = out.offset_col0 + j;
        const int rx = (dx + pad_w) % pad_w;
        dst[j] = static_cast<float>(src[rx] * scale);
      }
    }
    return out;
  }
};

CorrelationEngine::CorrelationEngine(const FeatureMap& reference, int template_height,
                                     int template_width) {
  if (reference.empty()) throw std::invalid_argument("fft_cross_correlate: empty reference");
  if (template_height < 1 || template_width < 1 || template_height > reference.height ||
      template_width > reference.width)
    throw std::invalid_argument("fft_cross_correlate: template dims must fit in reference");
  impl_ = std::make_unique<Impl>(reference, template_height, template_width);
}

CorrelationEngine::~CorrelationEngine() = default;

CorrelationMap CorrelationEngine::correlate(const FeatureMap& tpl) {
  return impl_->correlate(tpl);
}

CorrelationMap fft_cross_correlate(const FeatureMap& reference, const FeatureMap& tpl) {
  if (tpl.channels != reference.channels)
    throw std::invalid_argument("fft_cross_correlate: channel mismatch");
  CorrelationEngine engine(reference, tpl.height, tpl.width);
  return engine.correlate(tpl);
}

}  // namespace bevloc
