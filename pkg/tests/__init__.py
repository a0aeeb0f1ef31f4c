"""Test package for the factorizer segmentation models"""
