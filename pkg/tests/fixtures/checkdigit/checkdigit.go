// Package checkdigit computes and verifies check digits.
package checkdigit

import "errors"

// ErrInvalidArgument is returned when the input is not a digit string.
var ErrInvalidArgument = errors.New("checkdigit: invalid argument")

// Verifier checks a code whose last digit is its check digit.
type Verifier interface {
	Verify(code string) bool
}

// Generator computes the check digit for a seed.
type Generator interface {
	Generate(seed string) (int, error)
}

// Provider can both verify and generate.
type Provider interface {
	Verifier
	Generator
}

type luhn struct{}

type damm struct{}

type upc struct{}

func isNumber(n string) bool {
	if len(n) == 0 {
		return false
	}
	for _, r := range n {
		if r < '0' || r > '9' {
			return false
		}
	}
	return true
}

// NewLuhn returns the Luhn algorithm.
func NewLuhn() Provider {
	return &luhn{}
}

// NewDamm returns the Damm algorithm.
func NewDamm() Provider {
	return &damm{}
}

// NewUPC returns the UPC-A algorithm.
func NewUPC() Provider {
	return &upc{}
}

func (l *luhn) Verify(code string) bool {
	if len(code) < 2 {
		return false
	}
	d, err := l.Generate(code[:len(code)-1])
	return err == nil && d == int(code[len(code)-1]-'0')
}

func (l *luhn) Generate(seed string) (int, error) {
	if !isNumber(seed) {
		return 0, ErrInvalidArgument
	}
	sum, double := 0, true
	for i := len(seed) - 1; i >= 0; i-- {
		n := int(seed[i] - '0')
		if double {
			n *= 2
			if n > 9 {
				n -= 9
			}
		}
		sum += n
		double = !double
	}
	return (10 - sum%10) % 10, nil
}

func (u *upc) Verify(code string) bool {
	if len(code) != 12 {
		return false
	}
	d, err := u.Generate(code[:11])
	return err == nil && d == int(code[11]-'0')
}

func (u *upc) Generate(seed string) (int, error) {
	if len(seed) != 11 || !isNumber(seed) {
		return 0, ErrInvalidArgument
	}
	odd, even := 0, 0
	for i, r := range seed {
		if i%2 == 0 {
			odd += int(r - '0')
		} else {
			even += int(r - '0')
		}
	}
	return (10 - (odd*3+even)%10) % 10, nil
}
