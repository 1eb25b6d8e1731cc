#pragma once

// Generated by tests/oracle/oracles.py; do not edit.

namespace oracle {

// Adam from p = (0.5, -0.5), g = (1, -2) twice, lr = 0.1
inline constexpr double kAdamStep1[2] = {0.400000001, -0.4000000005};
inline constexpr double kAdamStep2[2] = {0.30000000200000065, -0.3000000010000007};

// a = {(0,0),(1,0),(0,2)} w = (1,2,1); b = {(1,1),(2,0)} w = (3,1)
inline constexpr double kRbfMmdBw15 = 0.22017588467737917;
inline constexpr double kLinearMmd = 0.625;
inline constexpr double kMedianDistance = 1.4142135623730951;
inline constexpr double kRbfMmdMedian = 0.24315970411467963;
inline constexpr double kRbfMmdUniformBw1 = 0.49954955519303185;

// elu(elu(x W1 + b1) W2 + b2) for the fixture in test_model.cpp
inline constexpr double kTwoLayerElu[2][2] = {{-0.7109492729718748, 0.13873030429375133}, {0.3734367481200352, -0.10577074698352186}};
// row means of |W1||W2| for the same fixture
inline constexpr double kContribution[3] = {0.78, 0.5325, 0.42};

// batch norm of {(1,10),(3,20),(8,60)}, scale (2, 0.5), shift (0.1, -1), eps 1e-5
inline constexpr double kBatchNorm[3][2] = {{-1.9380974856351387, -1.4629100449265253}, {-0.5793658285450464, -1.2314550224632625}, {2.8174633141801855, -0.30563493261021213}};

inline constexpr double kLn2 = 0.6931471805599453;
inline constexpr double kRbfUnitPair = 0.7869386805747332;
inline constexpr double kEluMinusOne = -0.6321205588285577;

}  // namespace oracle
