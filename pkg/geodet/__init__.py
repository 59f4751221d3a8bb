# geodet: geometry-aware 3D indoor detection toolkit
