// placeholder, filled in once the model stack exists
#include <pybind11/pybind11.h>
PYBIND11_MODULE(_conformer, m) { m.doc() = "conformer core bindings"; }
