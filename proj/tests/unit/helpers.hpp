#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "vbac/cohort.hpp"
#include "vbac/util.hpp"

namespace vbac::testing {

// A record that passes every inclusion filter, with all predictors stated.
inline DeliveryRecord eligible(bool vbac = true) {
  DeliveryRecord r;
  r[NumericField::kMaternalAge] = 30;
  r[NumericField::kGestationalAge] = 39;
  r[NumericField::kPrepregBmi] = 26.5;
  r[NumericField::kBirthWeight] = 3300;
  r[NumericField::kPrenatalVisits] = 11;
  r[NumericField::kIntervalSinceLastBirth] = 40;
  r[NumericField::kPriorCesareans] = 1;
  r[NumericField::kPriorLiveBirths] = 1;
  r[NumericField::kPlurality] = 1;
  for (std::size_t i = 0; i < kCategoricalFieldCount; ++i) r.categorical[i] = "N";
  r[CategoricalField::kRaceEthnicity] = "white";
  r[CategoricalField::kEducation] = "college";
  r[CategoricalField::kMaritalStatus] = "married";
  r[CategoricalField::kPayer] = "private";
  r[CategoricalField::kCensusRegion] = "south";
  r[CategoricalField::kUrbanization] = "metro";
  r[CategoricalField::kDeliveryPlace] = "hospital";
  r.tolac_attempted = TolacStatus::kYes;
  r.delivery_method = vbac ? DeliveryMethod::kVbac : DeliveryMethod::kRepeatCesarean;
  return r;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("vbac-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<std::uint8_t> random_labels(std::size_t n, double p, Rng& rng) {
  std::bernoulli_distribution b(p);
  std::vector<std::uint8_t> y(n);
  for (auto& v : y) v = b(rng) ? 1 : 0;
  return y;
}

}  // namespace vbac::testing
