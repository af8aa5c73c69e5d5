#pragma once

#include <array>
#include <cstddef>

// Finite-sample critical values for the cumulation-based stationarity and
// seasonality tests, simulated under the Gaussian null with the table_gen
// tool (200000 replications for the regression-based statistics, 50000 for
// the seasonality statistics, seed 20240801, T in {100, 250, 500, 1000}).
// The dense T = 1000 grids back approximate p-values by interpolation.

namespace ivts::stattests::tables {

struct CvRow {
  int sample_size;
  double q10, q05, q01;  // upper-tail critical values at 10% / 5% / 1%
};

// Upper-tail probabilities of the dense quantile grids below.
inline constexpr std::array<double, 11> kDenseTail = {
    0.995, 0.99, 0.95, 0.90, 0.75, 0.50, 0.25, 0.10, 0.05, 0.025, 0.01};

inline constexpr std::array<CvRow, 4> kRw = {{
    {100, 0.3487, 0.4619, 0.7404},
    {250, 0.3486, 0.4612, 0.7434},
    {500, 0.3466, 0.4624, 0.7416},
    {1000, 0.3476, 0.4614, 0.7400},
}};
inline constexpr std::array<double, 11> kRwDense = {0.0219, 0.0248, 0.0367, 0.0464, 0.0707, 0.1195, 0.2102, 0.3476, 0.4614, 0.5781, 0.7400};

inline constexpr std::array<CvRow, 4> kRwd = {{
    {100, 0.1200, 0.1480, 0.2160},
    {250, 0.1198, 0.1485, 0.2166},
    {500, 0.1194, 0.1477, 0.2172},
    {1000, 0.1193, 0.1479, 0.2176},
}};
inline constexpr std::array<double, 11> kRwdDense = {0.0156, 0.0174, 0.0235, 0.0280, 0.0382, 0.0557, 0.0829, 0.1193, 0.1479, 0.1774, 0.2176};

inline constexpr std::array<CvRow, 4> kIrw = {{
    {100, 0.0059, 0.0082, 0.0136},
    {250, 0.0059, 0.0082, 0.0138},
    {500, 0.0058, 0.0081, 0.0136},
    {1000, 0.0058, 0.0081, 0.0137},
}};
inline constexpr std::array<double, 11> kIrwDense = {0.0001, 0.0001, 0.0002, 0.0003, 0.0006, 0.0014, 0.0031, 0.0058, 0.0081, 0.0105, 0.0137};

inline constexpr std::array<CvRow, 4> kSeasonalDf2 = {{
    {100, 0.6235, 0.7609, 1.0620},
    {250, 0.6081, 0.7487, 1.0717},
    {500, 0.6030, 0.7416, 1.0649},
    {1000, 0.6067, 0.7460, 1.0684},
}};
inline constexpr std::array<double, 11> kSeasonalDf2Dense = {0.0706, 0.0790, 0.1103, 0.1329, 0.1859, 0.2775, 0.4196, 0.6067, 0.7460, 0.8864, 1.0684};

inline constexpr std::array<CvRow, 4> kSeasonalDf1 = {{
    {100, 0.3537, 0.4732, 0.7495},
    {250, 0.3472, 0.4592, 0.7420},
    {500, 0.3442, 0.4599, 0.7392},
    {1000, 0.3474, 0.4631, 0.7395},
}};
inline constexpr std::array<double, 11> kSeasonalDf1Dense = {0.0220, 0.0252, 0.0368, 0.0461, 0.0702, 0.1186, 0.2102, 0.3474, 0.4631, 0.5734, 0.7395};

inline constexpr std::array<CvRow, 4> kSeasonalDf9 = {{
    {100, 2.2564, 2.4770, 2.9080},
    {250, 2.1573, 2.3747, 2.8483},
    {500, 2.1210, 2.3483, 2.8175},
    {1000, 2.1107, 2.3364, 2.8265},
}};
inline constexpr std::array<double, 11> kSeasonalDf9Dense = {0.7020, 0.7533, 0.9029, 1.0020, 1.1910, 1.4535, 1.7705, 2.1107, 2.3364, 2.5431, 2.8265};

}  // namespace ivts::stattests::tables
